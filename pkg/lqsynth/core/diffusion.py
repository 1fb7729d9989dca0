"""
Moduł Dyfuzji - Procesy DDPM
============================
Obsługuje:
- Liniowy harmonogram szumu i stałe rozkładu a posteriori
- Proces w przód: skok zamknięty q(x_t | x_0) i łańcuch krok po kroku
- Proces odwrotny: predykcja x_0, krok a posteriori, pełny łańcuch
- Krok treningowy ze stratą L1 między ε a ε̂

Konwencja: krok dyfuzji t ∈ 1..T; t = 0 oznacza brak dyfuzji.
Predyktor szumu wywoływany jest z wektorem kroków t (po jednym na próbkę).
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Protocol, Tuple, Union

import numpy as np
from loguru import logger

from lqsynth.core.errors import (
    DimensionError,
    ScheduleError,
    StepRangeError,
    TrainingDivergedError,
)
from lqsynth.core.optim import Adam
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import Tape, Tensor, l1_loss

NoisePredictor = Callable[[Tensor, np.ndarray], Tensor]
StepLike = Union[int, np.ndarray]


class TrainableDenoiser(Protocol):
    """Model uczony w train_step (kroki jako indeksy 0..T−1)."""

    def parameters(self) -> Mapping[str, Tensor]: ...

    def forward(self, x: Tensor, indices: np.ndarray) -> Tensor: ...

    def update_ema(self, decay: float) -> None: ...


# ==================== Konfiguracja ====================

@dataclass
class DiffusionConfig:
    """Parametry dyfuzji zapisywane w nagłówku checkpointu."""
    total_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    t_max_face: int = 500
    t_max_natural: int = 250

    def __post_init__(self):
        if self.total_steps < 1:
            raise ScheduleError(f"T musi być dodatnie, jest {self.total_steps}")
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ScheduleError(
                f"Wymagane 0 < beta_start < beta_end < 1, jest {self.beta_start}, {self.beta_end}"
            )
        for name in ("t_max_face", "t_max_natural"):
            value = getattr(self, name)
            if not 0 <= value <= self.total_steps:
                raise ScheduleError(f"{name}={value} poza [0, {self.total_steps}]")

    def t_max_for(self, profile: str) -> int:
        """Górna granica t dla profilu syntezy (face / natural)."""
        if profile == "face":
            return self.t_max_face
        if profile == "natural":
            return self.t_max_natural
        raise ValueError(f"Nieznany profil syntezy: {profile}")

    @classmethod
    def from_settings(cls, settings) -> "DiffusionConfig":
        return cls(
            total_steps=settings.total_steps,
            beta_start=settings.beta_start,
            beta_end=settings.beta_end,
            t_max_face=settings.t_max_face,
            t_max_natural=settings.t_max_natural,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total_steps": self.total_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "t_max_face": self.t_max_face,
            "t_max_natural": self.t_max_natural,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DiffusionConfig":
        return cls(**data)


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Prekomputowane stałe harmonogramu w float64.

    Tablice mają długość T+1; indeks 0 jest wartownikiem
    (beta[0] = 0, alpha_bar[0] = 1), kroki 1..T to właściwy harmonogram.
    """
    total_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sqrt_alpha_bar: np.ndarray
    sqrt_one_minus_alpha_bar: np.ndarray
    posterior_mean_coef_x0: np.ndarray
    posterior_mean_coef_xt: np.ndarray
    posterior_variance: np.ndarray
    config: DiffusionConfig = field(default_factory=DiffusionConfig)

    @property
    def T(self) -> int:
        return self.total_steps

    def check_step(self, t: StepLike, allow_zero: bool = False) -> None:
        low = 0 if allow_zero else 1
        steps = np.asarray(t)
        if steps.size and (steps.min() < low or steps.max() > self.total_steps):
            raise StepRangeError(f"Krok t={t} poza zakresem [{low}, {self.total_steps}]")


def linear_schedule(
    T: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    config: Optional[DiffusionConfig] = None,
) -> NoiseSchedule:
    """Harmonogram z β liniowym w t."""
    if config is None:
        config = DiffusionConfig(
            total_steps=T,
            beta_start=beta_start,
            beta_end=beta_end,
            t_max_face=min(500, T),
            t_max_natural=min(250, T),
        )
    T, beta_start, beta_end = config.total_steps, config.beta_start, config.beta_end

    beta = np.zeros(T + 1, dtype=np.float64)
    beta[1:] = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)

    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    one_minus = 1.0 - alpha_bar
    coef_x0 = np.zeros(T + 1)
    coef_xt = np.zeros(T + 1)
    variance = np.zeros(T + 1)
    coef_x0[1:] = beta[1:] * np.sqrt(alpha_bar_prev[1:]) / one_minus[1:]
    coef_xt[1:] = (1.0 - alpha_bar_prev[1:]) * np.sqrt(alpha[1:]) / one_minus[1:]
    variance[1:] = (1.0 - alpha_bar_prev[1:]) / one_minus[1:] * beta[1:]

    schedule = NoiseSchedule(
        total_steps=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        sqrt_alpha_bar=np.sqrt(alpha_bar),
        sqrt_one_minus_alpha_bar=np.sqrt(one_minus),
        posterior_mean_coef_x0=coef_x0,
        posterior_mean_coef_xt=coef_xt,
        posterior_variance=variance,
        config=config,
    )
    logger.debug(f"Harmonogram liniowy: T={T}, alpha_bar[T]={alpha_bar[T]:.3e}")
    return schedule


def _per_sample(values: np.ndarray, t: StepLike, ndim: int) -> np.ndarray:
    """Współczynnik dla kroku t; dla wektora kroków kształt (N, 1, 1, 1)."""
    if np.ndim(t) == 0:
        return values[int(t)]
    return values[np.asarray(t)].reshape((-1,) + (1,) * (ndim - 1))


# ==================== Proces w przód ====================

def forward_diffuse(x0: Tensor, t: StepLike, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε; t = 0 zwraca x0 bez zmian."""
    sched.check_step(t, allow_zero=True)
    if x0.dims != eps.dims:
        raise DimensionError(f"forward_diffuse: x0 {x0.dims} i eps {eps.dims} różnią się")
    if np.ndim(t) == 0 and int(t) == 0:
        return Tensor(x0.data.copy())
    a = _per_sample(sched.sqrt_alpha_bar, t, x0.data.ndim)
    b = _per_sample(sched.sqrt_one_minus_alpha_bar, t, x0.data.ndim)
    return Tensor((a * x0.data + b * eps.data).astype(x0.data.dtype))


def diffuse_from_initial_lq(
    x: Tensor,
    t: int,
    rng: Rng,
    sched: NoiseSchedule,
) -> Tuple[Tensor, Tensor]:
    """Jednorazowy skok x → x_t ze świeżym ε; zwraca (x_t, ε)."""
    sched.check_step(t, allow_zero=True)
    eps = Tensor(rng.normal(x.dims, dtype=x.data.dtype))
    return forward_diffuse(x, t, eps, sched), eps


def forward_chain(x0: Tensor, t: int, rng: Rng, sched: NoiseSchedule) -> Tensor:
    """Dyfuzja krok po kroku: x_s = √α_s·x_{s−1} + √β_s·z."""
    sched.check_step(t, allow_zero=True)
    x = x0.data.astype(np.float64)
    for s in range(1, int(t) + 1):
        z = rng.normal(x.shape, dtype=np.float64)
        x = np.sqrt(sched.alpha[s]) * x + np.sqrt(sched.beta[s]) * z
    return Tensor(x.astype(x0.data.dtype))


# ==================== Proces odwrotny ====================

def predict_x0(
    x_t: Tensor,
    t: StepLike,
    eps_hat: Tensor,
    sched: NoiseSchedule,
    clip: bool = True,
) -> Tensor:
    """x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t, przycięte do [−1, 1]."""
    sched.check_step(t)
    a = _per_sample(sched.sqrt_alpha_bar, t, x_t.data.ndim)
    b = _per_sample(sched.sqrt_one_minus_alpha_bar, t, x_t.data.ndim)
    x0 = (x_t.data.astype(np.float64) - b * eps_hat.data) / a
    if clip:
        x0 = np.clip(x0, -1.0, 1.0)
    return Tensor(x0.astype(x_t.data.dtype))


def posterior_step(
    x_t: Tensor,
    t: int,
    x0_hat: Tensor,
    rng: Rng,
    sched: NoiseSchedule,
    deterministic: bool = False,
) -> Tensor:
    """Próbka z q(x_{t−1} | x_t, x̂0); dla t = 1 bez szumu."""
    sched.check_step(t)
    mean = (
        sched.posterior_mean_coef_x0[t] * x0_hat.data.astype(np.float64)
        + sched.posterior_mean_coef_xt[t] * x_t.data
    )
    if t > 1 and not deterministic:
        z = rng.normal(x_t.dims, dtype=np.float64)
        mean = mean + np.sqrt(sched.posterior_variance[t]) * z
    return Tensor(mean.astype(x_t.data.dtype))


def reverse_chain(
    x_t: Tensor,
    t_start: int,
    model: NoisePredictor,
    rng: Rng,
    sched: NoiseSchedule,
    deterministic: bool = False,
) -> Tensor:
    """Iteracyjne odszumianie od t_start do 0; t_start = 0 zwraca wejście."""
    sched.check_step(t_start, allow_zero=True)
    x = x_t
    batch = x_t.dims[0]
    for s in range(int(t_start), 0, -1):
        steps = np.full(batch, s, dtype=np.int64)
        eps_hat = model(x, steps)
        x0_hat = predict_x0(x, s, eps_hat, sched)
        x = posterior_step(x, s, x0_hat, rng, sched, deterministic=deterministic)
    return x


# ==================== Trening ====================

def compute_loss(
    predictor: NoisePredictor,
    x0: Tensor,
    rng: Rng,
    sched: NoiseSchedule,
) -> Tuple[Tensor, np.ndarray]:
    """
    Strata L1 między ε a ε̂ dla losowych kroków.

    Kroki t losowane jednostajnie z 1..T (indeksy modelu 0..T−1).

    Returns:
        (strata skalarna, wektor kroków t)
    """
    batch = x0.dims[0]
    steps = np.asarray(rng.integers(1, sched.total_steps, size=batch), dtype=np.int64)
    eps = Tensor(rng.normal(x0.dims, dtype=x0.data.dtype))
    x_t = forward_diffuse(x0, steps, eps, sched)
    eps_hat = predictor(x_t, steps)
    return l1_loss(eps_hat, eps), steps


def train_step(
    model: TrainableDenoiser,
    batch: Tensor,
    rng: Rng,
    sched: NoiseSchedule,
    optim: Adam,
    ema_decay: float = 0.995,
    step: Optional[int] = None,
) -> float:
    """Krok treningowy: strata, propagacja wsteczna, Adam, EMA."""
    with Tape() as tape:
        loss, steps = compute_loss(
            lambda x, t: model.forward(x, t - 1), batch, rng, sched
        )

    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDivergedError(
            "Nieskończona strata podczas treningu",
            {
                "step": step if step is not None else optim.state.step,
                "loss": value,
                "t_min": int(steps.min()),
                "t_max": int(steps.max()),
                "batch_abs_max": float(np.abs(batch.data).max()),
            },
        )

    grads = tape.backward(loss)
    params = model.parameters()
    optim.step({name: grads[p] for name, p in params.items()})
    model.update_ema(ema_decay)
    return value
