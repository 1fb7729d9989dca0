"""
Silnik Tensorów - Różniczkowanie Wsteczne
=========================================
Obsługuje:
- Tensor (N, C, H, W) na tablicach numpy (domyślnie float32)
- Taśmę (Tape) budowaną w trakcie wykonania (define-by-run)
- Operacje różniczkowalne potrzebne do UNet: conv2d, group_norm, silu, linear,
  upsample/avg_pool 2x, konkatenację kanałów, dodawanie, kombinacje liniowe
- Stratę L1 i propagację wsteczną do mapy gradientów

Redukcje (statystyki normalizacji, straty) akumulowane są w float64.
"""

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from lqsynth.core.errors import ConfigError, DimensionError
from lqsynth.core.rng import Rng

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
Scale = Union[float, np.ndarray]

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("lqsynth_active_tape", default=None)
_debug_finite_checks = False
_default_dtype: np.dtype = np.dtype(np.float32)
_deterministic = False

SUPPORTED_DTYPES = ("float32", "float64")


def set_debug_checks(enabled: bool) -> None:
    """Włącz sprawdzanie skończoności po każdej operacji."""
    global _debug_finite_checks
    _debug_finite_checks = enabled


def set_default_dtype(name: str) -> None:
    """Typ nowych tensorów, parametrów i wsadów (float32 | float64)."""
    global _default_dtype
    if name not in SUPPORTED_DTYPES:
        raise ConfigError(f"Nieobsługiwany typ tensorów: {name} (dozwolone {SUPPORTED_DTYPES})")
    _default_dtype = np.dtype(name)


def default_dtype() -> np.dtype:
    return _default_dtype


def set_deterministic(enabled: bool) -> None:
    """
    Tryb deterministyczny: kontrakcje conv2d/linear liczone pętlą einsum
    o stałej kolejności sumowania zamiast BLAS.
    """
    global _deterministic
    _deterministic = enabled


def configure_engine(settings) -> None:
    """Zastosuj TensorSettings do silnika."""
    set_default_dtype(settings.dtype)
    set_deterministic(settings.deterministic)
    set_debug_checks(settings.debug_finite_checks)


class Tensor:
    """
    Gęsty tensor z opcjonalnym udziałem w taśmie gradientów.

    Wyniki operacji są traktowane jako niemutowalne; jedynie optymalizator
    aktualizuje w miejscu dane parametrów.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
    ):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(_default_dtype)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.name = name

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() wymaga skalara, wymiary: {self.dims}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Node:
    """Węzeł taśmy: wynik operacji i funkcja wstecznego przejścia."""
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


class GradientMap:
    """Gradienty liści taśmy; nieosiągnięte tensory dostają zera."""

    def __init__(self, grads: Dict[int, np.ndarray], leaves: Dict[int, Tensor]):
        self._grads = grads
        self._leaves = leaves

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        grad = self._grads.get(id(tensor))
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._grads

    def __len__(self) -> int:
        return len(self._grads)

    def items(self) -> Iterator[Tuple[Tensor, np.ndarray]]:
        for key, grad in self._grads.items():
            yield self._leaves[key], grad


class Tape:
    """
    Taśma operacji budowana w trakcie wykonania.

    Użycie:
        with Tape() as tape:
            loss = l1_loss(model(x), target)
        grads = tape.backward(loss)
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(
        self,
        op: str,
        output: Tensor,
        inputs: Tuple[Tensor, ...],
        backward: BackwardFn,
    ) -> None:
        self.nodes.append(_Node(op, output, inputs, backward))

    def backward(self, loss: Tensor) -> GradientMap:
        """Propagacja wsteczna od skalarnej straty."""
        if loss.data.size != 1:
            raise DimensionError(f"Strata musi być skalarem, wymiary: {loss.dims}")

        produced = {id(node.output) for node in self.nodes}
        if id(loss) not in produced and not loss.requires_grad:
            raise ValueError("Strata nie należy do taśmy")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[int, Tensor] = {}
        if id(loss) not in produced:
            leaves[id(loss)] = loss

        # Węzły zapisane są w kolejności topologicznej; każdy odwiedzamy raz
        for node in reversed(self.nodes):
            key = id(node.output)
            upstream = grads.pop(key, None)
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                tid = id(tensor)
                if tid in grads:
                    grads[tid] = grads[tid] + grad
                else:
                    grads[tid] = grad
                if tid not in produced:
                    leaves[tid] = tensor

        leaf_grads = {k: v.astype(leaves[k].data.dtype, copy=False) for k, v in grads.items() if k in leaves}
        return GradientMap(leaf_grads, leaves)


def backward(loss: Tensor, tape: Tape) -> GradientMap:
    """Oblicz gradienty wszystkich liści osiągalnych ze straty."""
    return tape.backward(loss)


def _result(
    op: str,
    data: np.ndarray,
    inputs: Tuple[Tensor, ...],
    backward_fn: BackwardFn,
) -> Tensor:
    """Utwórz wynik operacji i zapisz węzeł na aktywnej taśmie."""
    if _debug_finite_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"Nieskończone wartości po operacji {op}")
    tape = _active_tape.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, out, inputs, backward_fn)
    return out


def _as_tensor(value: Union[Tensor, ArrayLike], dtype: Optional[np.dtype] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _check_same_dims(a: Tensor, b: Tensor, op: str) -> None:
    if a.dims != b.dims:
        raise DimensionError(f"{op}: niezgodne wymiary {a.dims} i {b.dims}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Zsumuj gradient po osiach rozgłoszonych do kształtu wejścia."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ==================== Konstrukcja ====================

def _contract(a: np.ndarray, b: np.ndarray, axes: Tuple[Sequence[int], Sequence[int]]) -> np.ndarray:
    """np.tensordot; w trybie deterministycznym einsum bez BLAS."""
    if not _deterministic:
        return np.tensordot(a, b, axes=axes)
    axes_a, axes_b = list(axes[0]), list(axes[1])
    free_a = [i for i in range(a.ndim) if i not in axes_a]
    free_b = [i for i in range(b.ndim) if i not in axes_b]
    shape = [a.shape[i] for i in free_a] + [b.shape[i] for i in free_b]
    left = a.transpose(free_a + axes_a).reshape(int(np.prod([a.shape[i] for i in free_a])), -1)
    right = b.transpose(axes_b + free_b).reshape(-1, int(np.prod([b.shape[i] for i in free_b])))
    return np.einsum("ij,jk->ik", left, right, optimize=False).reshape(shape)


def randn(rng: Rng, dims: Sequence[int], dtype: Optional[np.dtype] = None) -> Tensor:
    """Tensor próbek N(0, I) z jawnego strumienia Rng."""
    return Tensor(rng.normal(dims, dtype=_default_dtype if dtype is None else dtype))


def zeros(dims: Sequence[int], dtype: Optional[np.dtype] = None) -> Tensor:
    return Tensor(np.zeros(tuple(dims), dtype=_default_dtype if dtype is None else dtype))


# ==================== Dopełnienie brzegów ====================

def _pad(data: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return data
    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    if mode == "reflect":
        if pad >= data.shape[2] or pad >= data.shape[3]:
            raise DimensionError(
                f"Odbicie o {pad} px wymaga obrazu większego niż {data.shape[2]}x{data.shape[3]}"
            )
        return np.pad(data, widths, mode="reflect")
    if mode == "zero":
        return np.pad(data, widths, mode="constant")
    raise ValueError(f"Nieobsługiwany tryb dopełnienia: {mode}")


def _fold_reflect_axis(grad: np.ndarray, pad: int, axis: int) -> np.ndarray:
    """Zsumuj gradient odbitych pikseli z powrotem do ich źródeł."""
    grad = np.moveaxis(grad, axis, 0)
    n = grad.shape[0] - 2 * pad
    core = grad[pad:pad + n].copy()
    for k in range(1, pad + 1):
        core[k] += grad[pad - k]
        core[n - 1 - k] += grad[pad + n - 1 + k]
    return np.moveaxis(core, 0, axis)


def _unpad(grad: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return grad
    if mode == "zero":
        return grad[:, :, pad:-pad, pad:-pad]
    grad = _fold_reflect_axis(grad, pad, 2)
    return _fold_reflect_axis(grad, pad, 3)


# ==================== Operacje ====================

def conv2d(
    input: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = "reflect",
) -> Tensor:
    """
    Splot 2D (korelacja jak w sieciach neuronowych) z dopełnieniem "same".

    Args:
        input: (N, C_in, H, W)
        weight: (C_out, C_in, k, k), k nieparzyste
        bias: (C_out,) lub None
        stride: krok
        padding: "reflect" (domyślnie) lub "zero"

    Returns:
        (N, C_out, (H + 2p - k) // stride + 1, ...), p = k // 2
    """
    x, w = input.data, weight.data
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: oczekiwano tensorów rzędu 4, są {x.shape} i {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: jądro musi być kwadratowe i nieparzyste, jest {kh}x{kw}")
    if x.shape[1] != c_in:
        raise DimensionError(f"conv2d: wejście ma {x.shape[1]} kanałów, wagi oczekują {c_in}")
    if bias is not None and bias.dims != (c_out,):
        raise DimensionError(f"conv2d: bias {bias.dims} nie pasuje do {c_out} kanałów")
    if stride < 1:
        raise DimensionError(f"conv2d: niepoprawny krok {stride}")

    k = kh
    pad = k // 2
    xp = _pad(x, pad, padding)
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, _, h_out, w_out = windows.shape[:4]

    # (N, Ho, Wo, C_out) -> (N, C_out, Ho, Wo)
    out = _contract(windows, w, ([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def _backward(g: np.ndarray):
        grad_w = _contract(g, windows, ([0, 2, 3], [0, 2, 3]))
        grad_b = g.sum(axis=(0, 2, 3)) if bias is not None else None
        cols = _contract(g, w, ([1], [0]))  # (N, Ho, Wo, C_in, k, k)
        grad_xp = np.zeros_like(xp)
        h_span = stride * (h_out - 1) + 1
        w_span = stride * (w_out - 1) + 1
        for i in range(k):
            for j in range(k):
                grad_xp[:, :, i:i + h_span:stride, j:j + w_span:stride] += (
                    cols[..., i, j].transpose(0, 3, 1, 2)
                )
        grad_x = _unpad(grad_xp, pad, padding)
        return grad_x, grad_w, grad_b

    inputs = (input, weight) if bias is None else (input, weight, bias)
    return _result("conv2d", out, inputs, _backward)


def group_norm(
    input: Tensor,
    groups: int,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
) -> Tensor:
    """Normalizacja grupowa: zerowa średnia i jednostkowa wariancja na (próbkę, grupę)."""
    x = input.data
    if x.ndim != 4:
        raise DimensionError(f"group_norm: oczekiwano rzędu 4, jest {x.shape}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups != 0:
        raise DimensionError(f"group_norm: {groups} grup nie dzieli {c} kanałów")
    if gamma.dims != (c,) or beta.dims != (c,):
        raise DimensionError(f"group_norm: gamma/beta muszą mieć wymiar ({c},)")

    xg = x.reshape(n, groups, -1).astype(np.float64)
    mean = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat_g = (xg - mean) * inv_std
    xhat = xhat_g.reshape(n, c, h, w)
    out = (xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]).astype(x.dtype)

    def _backward(g: np.ndarray):
        g64 = g.astype(np.float64)
        grad_gamma = (g64 * xhat).sum(axis=(0, 2, 3))
        grad_beta = g64.sum(axis=(0, 2, 3))
        dxhat = (g64 * gamma.data[None, :, None, None]).reshape(n, groups, -1)
        grad_x = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat_g * (dxhat * xhat_g).mean(axis=-1, keepdims=True)
        )
        return grad_x.reshape(n, c, h, w), grad_gamma, grad_beta

    return _result("group_norm", out, (input, gamma, beta), _backward)


def silu(input: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    x = input.data
    sig = expit(x)
    out = (x * sig).astype(x.dtype)

    def _backward(g: np.ndarray):
        return (g * sig * (1.0 + x * (1.0 - sig)),)

    return _result("silu", out, (input,), _backward)


def linear(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Warstwa gęsta: x @ W^T + b, x: (N, D_in), W: (D_out, D_in)."""
    x, w = input.data, weight.data
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: niezgodne wymiary {x.shape} i {w.shape}")
    if bias is not None and bias.dims != (w.shape[0],):
        raise DimensionError(f"linear: bias {bias.dims} nie pasuje do {w.shape[0]} wyjść")
    out = _contract(x, w, ([1], [1]))
    if bias is not None:
        out = out + bias.data
    out = out.astype(x.dtype)

    def _backward(g: np.ndarray):
        grad_b = g.sum(axis=0) if bias is not None else None
        return _contract(g, w, ([1], [0])), _contract(g, x, ([0], [0])), grad_b

    inputs = (input, weight) if bias is None else (input, weight, bias)
    return _result("linear", out, inputs, _backward)


def upsample_nearest2x(input: Tensor) -> Tensor:
    """Powiększenie 2x metodą najbliższego sąsiada."""
    x = input.data
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest2x: oczekiwano rzędu 4, jest {x.shape}")
    out = x.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def _backward(g: np.ndarray):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result("upsample_nearest2x", out, (input,), _backward)


def avg_pool2x(input: Tensor) -> Tensor:
    """Uśrednianie bloków 2x2."""
    x = input.data
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"avg_pool2x: wymiary przestrzenne muszą być parzyste, są {x.shape}")
    n, c, h, w = x.shape
    out = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)).astype(x.dtype)

    def _backward(g: np.ndarray):
        return (g.repeat(2, axis=2).repeat(2, axis=3) * 0.25,)

    return _result("avg_pool2x", out, (input,), _backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Sklejenie wzdłuż osi kanałów."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise DimensionError("concat_channels: oczekiwano tensorów rzędu 4")
    if a.dims[0] != b.dims[0] or a.dims[2:] != b.dims[2:]:
        raise DimensionError(f"concat_channels: niezgodne wymiary {a.dims} i {b.dims}")
    split = a.dims[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def _backward(g: np.ndarray):
        return g[:, :split], g[:, split:]

    return _result("concat_channels", out, (a, b), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Suma z rozgłaszaniem numpy."""
    try:
        out = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: niezgodne wymiary {a.dims} i {b.dims}") from e

    def _backward(g: np.ndarray):
        return _unbroadcast(g, a.dims), _unbroadcast(g, b.dims)

    return _result("add", out, (a, b), _backward)


def scale_add(s1: Scale, a: Tensor, s2: Scale, b: Tensor) -> Tensor:
    """s1 * a + s2 * b; skale mogą być skalarami lub tablicami rozgłaszalnymi."""
    _check_same_dims(a, b, "scale_add")
    out = (s1 * a.data + s2 * b.data).astype(a.data.dtype)

    def _backward(g: np.ndarray):
        return _unbroadcast(s1 * g, a.dims), _unbroadcast(s2 * g, b.dims)

    return _result("scale_add", out, (a, b), _backward)


def reshape(input: Tensor, dims: Sequence[int]) -> Tensor:
    """Zmiana kształtu bez kopiowania danych."""
    original = input.dims
    try:
        out = input.data.reshape(tuple(dims))
    except ValueError as e:
        raise DimensionError(f"reshape: nie można zmienić {original} na {tuple(dims)}") from e

    def _backward(g: np.ndarray):
        return (g.reshape(original),)

    return _result("reshape", out, (input,), _backward)


def sum_all(input: Tensor) -> Tensor:
    """Suma wszystkich elementów (akumulacja float64)."""
    out = np.asarray(input.data.sum(dtype=np.float64), dtype=input.data.dtype)

    def _backward(g: np.ndarray):
        return (np.broadcast_to(g, input.dims).astype(input.data.dtype),)

    return _result("sum_all", out, (input,), _backward)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Średni błąd bezwzględny; podgradient 0 w punktach równości."""
    _check_same_dims(pred, target, "l1_loss")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    count = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=pred.data.dtype)

    def _backward(g: np.ndarray):
        grad = (np.sign(diff) * (float(g) / count)).astype(pred.data.dtype)
        return grad, -grad

    return _result("l1_loss", out, (pred, target), _backward)


# ==================== Osadzenie czasu ====================

def sinusoidal_time_embedding(t: int, dim: int) -> np.ndarray:
    """
    Przeplatane sin/cos kroku t dla geometrycznie rozłożonych częstotliwości
    kątowych od 1 do 1/10000, czyli okresy od 1 do 10000 mierzone w radianach
    (2π do 2π·10⁴ kroków). Okres jednego kroku dawałby stałą parę (0, 1)
    dla całkowitych t.

    Returns:
        Wektor [sin(t·w_0), cos(t·w_0), sin(t·w_1), cos(t·w_1), ...]
    """
    return time_embedding_batch(np.asarray([t]), dim)[0]


def time_embedding_batch(steps: np.ndarray, dim: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """Osadzenia dla wektora kroków; wynik (N, dim)."""
    if dim < 2 or dim % 2:
        raise DimensionError(f"Wymiar osadzenia czasu musi być parzysty, jest {dim}")
    steps = np.asarray(steps, dtype=np.float64).reshape(-1)
    if np.any(steps < 0):
        raise ValueError("Krok czasu musi być nieujemny")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.power(10000.0, -np.arange(half, dtype=np.float64) / (half - 1))
    angles = steps[:, None] * freqs[None, :]
    emb = np.empty((steps.size, dim), dtype=np.float64)
    emb[:, 0::2] = np.sin(angles)
    emb[:, 1::2] = np.cos(angles)
    return emb.astype(dtype)
