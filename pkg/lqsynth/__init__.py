"""
LQ Synth - Synteza Par HQ-LQ Metodą Dyfuzyjną
=============================================

Pakiet z możliwościami:
- Silnika tensorów z automatycznym różniczkowaniem (NumPy)
- Procesów dyfuzji DDPM i denoisera UNet
- Ręcznych potoków degradacji (Bicubic, Classical, Shuffle, HighOrder)
- Syntezy par ze strażnikiem struktury
- Metryk (PSNR, SSIM, odległość Frécheta) i krzywych w funkcji t
- Korpusu toy, checkpointów i manifestów

Użycie:
    from lqsynth import DenoiserModel, UNetConfig, linear_schedule, synthesize_lq

    sched = linear_schedule()
    model = DenoiserModel.init(UNetConfig(), Rng(0))
    lq, meta = synthesize_lq(hq, model.ema_copy(), sched, SynthesisConfig(), Rng(1))
"""

__version__ = "1.0.0"
__author__ = "LQ Synth Team"

from lqsynth.config.settings import LqSynthSettings, get_settings
from lqsynth.core.denoiser import DenoiserModel, UNetConfig
from lqsynth.core.diffusion import linear_schedule
from lqsynth.core.rng import Rng
from lqsynth.modules.synthesis import SynthesisConfig, synthesize_lq

__all__ = [
    "DenoiserModel",
    "UNetConfig",
    "linear_schedule",
    "Rng",
    "SynthesisConfig",
    "synthesize_lq",
    "get_settings",
    "LqSynthSettings",
]
