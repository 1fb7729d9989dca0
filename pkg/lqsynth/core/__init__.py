"""Core modules for LQ Synth: tensor engine, diffusion, denoiser."""

from lqsynth.core.errors import LqSynthError
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import Tape, Tensor, backward
from lqsynth.core.optim import Adam, AdamState, adam_step, ema_update
from lqsynth.core.diffusion import DiffusionConfig, NoiseSchedule, linear_schedule
from lqsynth.core.denoiser import DenoiserModel, UNetConfig

__all__ = [
    "LqSynthError",
    "Rng",
    "Tape",
    "Tensor",
    "backward",
    "Adam",
    "AdamState",
    "adam_step",
    "ema_update",
    "DiffusionConfig",
    "NoiseSchedule",
    "linear_schedule",
    "DenoiserModel",
    "UNetConfig",
]
