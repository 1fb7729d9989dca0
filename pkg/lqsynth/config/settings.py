"""
Konfiguracja LQ Synth
=====================
Centralna konfiguracja wszystkich modułów: silnika tensorów, dyfuzji, denoisera,
degradacji, syntezy par, metryk i korpusu toy.

Źródła (od najwyższego priorytetu): flaga CLI > zmienna środowiskowa
(``LQSYNTH_<SEKCJA>__<KLUCZ>``) > linia ``klucz=wartość`` w pliku ``.env`` > domyślne.
"""

from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class TensorSettings(BaseModel):
    """Ustawienia silnika tensorów."""
    dtype: Literal["float32", "float64"] = Field(default="float32")
    deterministic: bool = Field(default=False)  # Stała kolejność redukcji (einsum zamiast BLAS)
    debug_finite_checks: bool = Field(default=False)  # Sprawdzaj NaN/Inf po każdej operacji


class DiffusionSettings(BaseModel):
    """Ustawienia harmonogramu szumu."""
    total_steps: int = Field(default=1000, ge=1)
    beta_start: float = Field(default=1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(default=0.02, gt=0.0, lt=1.0)
    t_max_face: int = Field(default=500, ge=0)
    t_max_natural: int = Field(default=250, ge=0)

    @model_validator(mode="after")
    def _check_order(self) -> "DiffusionSettings":
        if not self.beta_start < self.beta_end:
            raise ValueError("beta_start musi być mniejsze niż beta_end")
        for t_max in (self.t_max_face, self.t_max_natural):
            if t_max > self.total_steps:
                raise ValueError(f"t_max={t_max} przekracza T={self.total_steps}")
        return self


class DenoiserSettings(BaseModel):
    """Ustawienia architektury UNet."""
    in_channels: int = Field(default=3, ge=1)
    base_channels: int = Field(default=32, ge=1)
    channel_mults: List[int] = Field(default=[1, 2, 4])
    res_blocks_per_level: int = Field(default=2, ge=1)
    time_embed_dim: int = Field(default=128, ge=2)
    norm_groups: int = Field(default=8, ge=1)


class TrainingSettings(BaseModel):
    """Ustawienia treningu DDPM."""
    batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=8e-5, gt=0.0)
    ema_decay: float = Field(default=0.995, gt=0.0, lt=1.0)
    adam_beta1: float = Field(default=0.9)
    adam_beta2: float = Field(default=0.999)
    adam_eps: float = Field(default=1e-8)
    iterations: int = Field(default=20000, ge=0)
    patch_size: int = Field(default=32, ge=4)
    log_every: int = Field(default=50, ge=1)
    checkpoint_every: int = Field(default=1000, ge=1)
    loss_smoothing: float = Field(default=0.98, ge=0.0, lt=1.0)
    seed: int = Field(default=0)


class DegradationSettings(BaseModel):
    """Zakresy parametrów ręcznych modeli degradacji."""
    target_scale: float = Field(default=0.5, gt=0.0)
    blur_sigma: Tuple[float, float] = Field(default=(0.2, 3.0))
    kernel_sizes: List[int] = Field(default=[7, 9, 11, 13, 15, 17, 19, 21])
    downscale: Tuple[float, float] = Field(default=(1.0, 4.0))
    noise_sigma: Tuple[float, float] = Field(default=(1.0 / 255.0, 30.0 / 255.0))
    gray_noise_prob: float = Field(default=0.4, ge=0.0, le=1.0)
    jpeg_quality: Tuple[int, int] = Field(default=(30, 95))
    resize_filters: List[str] = Field(default=["bicubic", "bilinear", "area"])
    second_round_attenuation: float = Field(default=0.5, gt=0.0, le=1.0)
    second_round_prob: float = Field(default=0.8, ge=0.0, le=1.0)
    min_side: int = Field(default=4, ge=1)


class SynthesisSettings(BaseModel):
    """Ustawienia syntezy par HQ-LQ."""
    profile: str = Field(default="face")  # face | natural
    pipeline: str = Field(default="high_order")
    t_min: int = Field(default=0, ge=0)
    t_max: Optional[int] = Field(default=None)  # None = wg profilu
    guard_enabled: bool = Field(default=True)
    guard_db: float = Field(default=24.0, ge=0.0)
    max_retries: int = Field(default=3, ge=0)
    deterministic_reverse: bool = Field(default=False)
    parallelism: int = Field(default=1, ge=1)
    seed: int = Field(default=0)


class MetricsSettings(BaseModel):
    """Ustawienia metryk i ekstraktorów cech."""
    extractor: str = Field(default="patch_stats")  # patch_stats | denoiser_features
    patch_size: int = Field(default=8, ge=2)
    strides: List[int] = Field(default=[8])
    histogram_bins: int = Field(default=8, ge=1)
    covariance_eps: float = Field(default=1e-6, ge=0.0)
    denoiser_t: int = Field(default=50, ge=1)
    denoiser_level: int = Field(default=1, ge=0)
    sweep_t_grid: List[int] = Field(default=[0, 25, 50, 100, 150, 200])


class ToyCorpusSettings(BaseModel):
    """Ustawienia korpusu toy DID."""
    severity_profile: str = Field(default="heavy")  # none | heavy
    corpus_size: int = Field(default=800, ge=1)
    image_size: int = Field(default=64, ge=8)
    # Zakresy rozłączne z potokami Shuffle/HighOrder na osi szumu i JPEG
    heavy_noise_sigma: Tuple[float, float] = Field(default=(35.0 / 255.0, 50.0 / 255.0))
    heavy_jpeg_quality: Tuple[int, int] = Field(default=(10, 25))
    heavy_blur_sigma: Tuple[float, float] = Field(default=(1.0, 2.5))
    heavy_downscale: Tuple[float, float] = Field(default=(2.0, 4.0))


class LqSynthSettings(BaseSettings):
    """Główna konfiguracja LQ Synth."""
    name: str = Field(default="LQ Synth")
    version: str = "1.0.0"
    debug: bool = Field(default=False)
    log_level: str = Field(default="INFO")
    data_dir: Path = Field(default=Path("data"))
    runs_dir: Path = Field(default=Path("data/runs"))

    # Moduły
    tensor: TensorSettings = Field(default_factory=TensorSettings)
    diffusion: DiffusionSettings = Field(default_factory=DiffusionSettings)
    denoiser: DenoiserSettings = Field(default_factory=DenoiserSettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    degradation: DegradationSettings = Field(default_factory=DegradationSettings)
    synthesis: SynthesisSettings = Field(default_factory=SynthesisSettings)
    metrics: MetricsSettings = Field(default_factory=MetricsSettings)
    toy_corpus: ToyCorpusSettings = Field(default_factory=ToyCorpusSettings)

    model_config = SettingsConfigDict(
        env_prefix="LQSYNTH_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# Singleton konfiguracji
_settings: Optional[LqSynthSettings] = None


def get_settings() -> LqSynthSettings:
    """Pobierz singleton konfiguracji."""
    global _settings
    if _settings is None:
        _settings = LqSynthSettings()
    return _settings


def reload_settings(env_file: Optional[Path] = None) -> LqSynthSettings:
    """Przeładuj konfigurację (opcjonalnie z innego pliku klucz=wartość)."""
    global _settings
    if env_file is not None:
        _settings = LqSynthSettings(_env_file=env_file)
    else:
        _settings = LqSynthSettings()
    return _settings
