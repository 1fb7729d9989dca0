"""LQ Synth modules - degradations, synthesis, metrics, data."""

from lqsynth.modules.degradations import DegradationKind, DegradationRanges, apply, sample_pipeline
from lqsynth.modules.metrics import FeatureStats, frechet_distance, psnr, ssim
from lqsynth.modules.synthesis import SynthesisConfig, batch_synthesize, synthesize_lq
from lqsynth.modules.data_io import DatasetManifest, load_checkpoint, save_checkpoint
from lqsynth.modules.trainer import Trainer, TrainerConfig

__all__ = [
    "DegradationKind",
    "DegradationRanges",
    "apply",
    "sample_pipeline",
    "FeatureStats",
    "frechet_distance",
    "psnr",
    "ssim",
    "SynthesisConfig",
    "batch_synthesize",
    "synthesize_lq",
    "DatasetManifest",
    "load_checkpoint",
    "save_checkpoint",
    "Trainer",
    "TrainerConfig",
]
