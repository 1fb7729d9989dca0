"""Configuration module."""

from lqsynth.config.settings import (
    get_settings,
    reload_settings,
    LqSynthSettings,
    TensorSettings,
    DiffusionSettings,
    DenoiserSettings,
    TrainingSettings,
    DegradationSettings,
    SynthesisSettings,
    MetricsSettings,
    ToyCorpusSettings,
)

__all__ = [
    "get_settings",
    "reload_settings",
    "LqSynthSettings",
    "TensorSettings",
    "DiffusionSettings",
    "DenoiserSettings",
    "TrainingSettings",
    "DegradationSettings",
    "SynthesisSettings",
    "MetricsSettings",
    "ToyCorpusSettings",
]
