"""Sprawdzanie gradientów różnicami centralnymi."""

from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from lqsynth.core.tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    """Wynik porównania gradientu analitycznego z numerycznym."""
    ok: bool
    max_abs_error: float
    max_rel_error: float
    checked: int

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "max_abs_error": self.max_abs_error,
            "max_rel_error": self.max_rel_error,
            "checked": self.checked,
        }


def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-3) -> np.ndarray:
    """Gradient skalarnej funkcji fn względem danych tensora (różnice centralne)."""
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros(tensor.data.shape, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-5,
) -> GradCheckResult:
    """
    Porównaj gradienty z taśmy z różnicami centralnymi.

    Element przechodzi, gdy |a − n| ≤ atol + rtol·max(|a|, |n|).
    Tensory powinny być w float64, aby błąd obcięcia dominował nad zaokrągleniem.
    """
    with Tape() as tape:
        loss = fn()
    grads = tape.backward(loss)

    max_abs = 0.0
    max_rel = 0.0
    checked = 0
    failures: List[bool] = []
    for tensor in tensors:
        analytic = grads[tensor].astype(np.float64)
        numeric = numeric_gradient(fn, tensor, h)
        diff = np.abs(analytic - numeric)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        failures.append(bool(np.any(diff > atol + rtol * scale)))
        max_abs = max(max_abs, float(diff.max(initial=0.0)))
        rel = diff / np.maximum(scale, atol)
        max_rel = max(max_rel, float(rel.max(initial=0.0)))
        checked += diff.size

    return GradCheckResult(
        ok=not any(failures),
        max_abs_error=max_abs,
        max_rel_error=max_rel,
        checked=checked,
    )
