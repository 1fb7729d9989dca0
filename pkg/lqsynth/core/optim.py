"""
Optymalizatory
==============
Obsługuje:
- Adam z korekcją obciążenia (β₁=0.9, β₂=0.999, ε=1e-8)
- Wykładnicze uśrednianie wag (EMA)
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from lqsynth.core.errors import DimensionError
from lqsynth.core.tensor import Tensor


@dataclass
class AdamState:
    """Momenty pierwszego i drugiego rzędu per parametr oraz licznik kroków."""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def moment_names(self):
        return sorted(self.m)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """
    Jeden krok Adama; aktualizuje dane parametrów w miejscu.

    Parametry bez gradientu w `grads` traktowane są jak gradient zerowy.
    """
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.data.shape:
            raise DimensionError(f"Gradient {name}: {grad.shape} != {param.data.shape}")

        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)

        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name] = m.astype(param.data.dtype, copy=False)
        state.v[name] = v.astype(param.data.dtype, copy=False)

        m_hat = m / bias1
        v_hat = v / bias2
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        param.data = (param.data - update).astype(param.data.dtype, copy=False)

    return state


class Adam:
    """Obiektowa nakładka na adam_step."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 8e-5,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        state: AdamState = None,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = state or AdamState()

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


def ema_update(
    ema_params: Mapping[str, Tensor],
    params: Mapping[str, Tensor],
    decay: float,
) -> Mapping[str, Tensor]:
    """m ← decay·m + (1−decay)·w dla każdego parametru."""
    if not 0.0 < decay < 1.0:
        raise ValueError(f"Współczynnik EMA musi leżeć w (0, 1), jest {decay}")
    for name, shadow in ema_params.items():
        live = params[name]
        if shadow.data.shape != live.data.shape:
            raise DimensionError(f"EMA {name}: {shadow.data.shape} != {live.data.shape}")
        shadow.data = (decay * shadow.data + (1.0 - decay) * live.data).astype(
            shadow.data.dtype, copy=False
        )
    return ema_params
