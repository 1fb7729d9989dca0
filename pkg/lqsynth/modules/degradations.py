"""
Moduł Degradacji - Ręczne Modele d(y)
=====================================
Obsługuje:
- Anizotropowe jądra Gaussa i splot z odbiciem na brzegach
- Skalowanie separowalne (bicubic Keys a=−0.5, bilinear, nearest, area)
- Szum Gaussa (kolorowy lub wspólny dla kanałów) i kompresję JPEG
- Potoki: bicubic, classical, shuffle (losowa kolejność), high-order (dwie rundy)
- Odtwarzalne próbki degradacji zapisywane w manifestach par
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import ndimage

from lqsynth.core.errors import DegradationError, KernelError
from lqsynth.core.rng import Rng
from lqsynth.modules.jpeg import jpeg_roundtrip

RESIZE_FILTERS = ("bicubic", "bilinear", "nearest", "area")

Size = Tuple[int, int]


class DegradationKind(str, Enum):
    """Rodzina ręcznej degradacji."""
    BICUBIC = "bicubic"
    CLASSICAL = "classical"
    SHUFFLE = "shuffle"
    HIGH_ORDER = "high_order"


# ==================== Jądra ====================

def anisotropic_gaussian_kernel(
    sigma_x: float,
    sigma_y: float,
    theta: float,
    size: int,
) -> np.ndarray:
    """
    Obrócone anizotropowe jądro Gaussa znormalizowane do sumy 1.

    Args:
        sigma_x, sigma_y: odchylenia wzdłuż osi własnych (> 0)
        theta: kąt obrotu w radianach
        size: nieparzysty rozmiar jądra

    Returns:
        Tablica (size, size) float64
    """
    if size < 1 or size % 2 == 0:
        raise KernelError(f"Rozmiar jądra musi być nieparzysty, jest {size}")
    if sigma_x <= 0 or sigma_y <= 0:
        raise KernelError(f"Odchylenia jądra muszą być dodatnie: {sigma_x}, {sigma_y}")

    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    cov = rotation @ np.diag([sigma_x ** 2, sigma_y ** 2]) @ rotation.T
    inv = np.linalg.inv(cov)

    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    coords = np.stack([xx, yy], axis=-1)
    exponent = -0.5 * np.einsum("...i,ij,...j->...", coords, inv, coords)
    kernel = np.exp(exponent)
    return kernel / kernel.sum()


def convolve2d_reflect(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Splot obrazu (H, W[, C]) z jądrem 2D; brzegi odbijane bez powtórzenia krawędzi."""
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise KernelError(f"Jądro musi być 2D o nieparzystych wymiarach, jest {kernel.shape}")
    if image.ndim == 2:
        return ndimage.convolve(image, kernel.astype(image.dtype), mode="mirror")
    channels = [
        ndimage.convolve(image[..., c], kernel.astype(image.dtype), mode="mirror")
        for c in range(image.shape[-1])
    ]
    return np.stack(channels, axis=-1)


# ==================== Skalowanie ====================

def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    absx = np.abs(x)
    absx2 = absx ** 2
    absx3 = absx ** 3
    near = ((a + 2) * absx3 - (a + 3) * absx2 + 1) * (absx <= 1)
    far = (a * absx3 - 5 * a * absx2 + 8 * a * absx - 4 * a) * ((absx > 1) & (absx <= 2))
    return near + far


def _triangle(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(x))


def _symmetric_index(idx: np.ndarray, length: int) -> np.ndarray:
    """Odbicie symetryczne z powtórzeniem krawędzi (−1 → 0, n → n−1)."""
    period = 2 * length
    idx = np.mod(idx, period)
    return np.where(idx >= length, period - 1 - idx, idx)


def resize_weights(in_length: int, out_length: int, scale: float, filter: str) -> np.ndarray:
    """
    Gęsta macierz wag (out_length, in_length) dla jednej osi.

    Wiersze sumują się do 1. Przy pomniejszaniu jądra bicubic/bilinear są
    rozciągane o 1/scale (antyaliasing).
    """
    if filter not in RESIZE_FILTERS:
        raise DegradationError(f"Nieznany filtr skalowania: {filter}")
    weights = np.zeros((out_length, in_length), dtype=np.float64)
    out_idx = np.arange(out_length, dtype=np.float64)

    if filter == "nearest":
        src = np.minimum(np.floor((out_idx + 0.5) / scale).astype(np.int64), in_length - 1)
        weights[np.arange(out_length), src] = 1.0
        return weights

    if filter == "area":
        starts = out_idx / scale
        ends = (out_idx + 1.0) / scale
        cells = np.arange(in_length, dtype=np.float64)
        overlap = np.minimum(ends[:, None], cells[None, :] + 1.0) - np.maximum(
            starts[:, None], cells[None, :]
        )
        weights = np.maximum(overlap, 0.0)
    else:
        kernel, width = (_cubic, 4.0) if filter == "bicubic" else (_triangle, 2.0)
        antialias = scale < 1.0
        if antialias:
            width = width / scale
        centers = (out_idx + 0.5) / scale - 0.5
        left = np.floor(centers - width / 2.0).astype(np.int64)
        taps = int(math.ceil(width)) + 2
        indices = left[:, None] + np.arange(taps)[None, :]
        distance = centers[:, None] - indices
        if antialias:
            taps_weights = scale * kernel(distance * scale)
        else:
            taps_weights = kernel(distance)
        rows = np.repeat(np.arange(out_length), taps)
        np.add.at(
            weights,
            (rows, _symmetric_index(indices, in_length).reshape(-1)),
            taps_weights.reshape(-1),
        )

    sums = weights.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DegradationError("Zdegenerowane wagi skalowania")
    return weights / sums


def output_size(size: Size, scale: float) -> Size:
    """round(wymiar·scale), co najmniej 1."""
    if not np.isfinite(scale) or scale <= 0:
        raise DegradationError(f"Skala musi być dodatnia, jest {scale}")
    return tuple(max(1, int(round(n * scale))) for n in size)


def resize_to(image: np.ndarray, size: Size, filter: str = "bicubic") -> np.ndarray:
    """Przeskaluj obraz (H, W[, C]) do zadanego rozmiaru."""
    in_h, in_w = image.shape[:2]
    out_h, out_w = int(size[0]), int(size[1])
    if out_h < 1 or out_w < 1:
        raise DegradationError(f"Zdegenerowany rozmiar wyjściowy {size}")
    weights_h = resize_weights(in_h, out_h, out_h / in_h, filter)
    weights_w = resize_weights(in_w, out_w, out_w / in_w, filter)
    data = image.astype(np.float64)
    out = np.tensordot(weights_h, data, axes=([1], [0]))
    out = np.moveaxis(np.tensordot(weights_w, out, axes=([1], [1])), 0, 1)
    return out.astype(image.dtype if np.issubdtype(image.dtype, np.floating) else np.float32)


def resize(image: np.ndarray, scale: float, filter: str = "bicubic") -> np.ndarray:
    """Przeskaluj obraz o współczynnik scale (rozmiar round(n·scale), min 1)."""
    return resize_to(image, output_size(image.shape[:2], scale), filter)


# ==================== Szum ====================

def add_gaussian_noise(image: np.ndarray, sigma: float, gray: bool, rng: Rng) -> np.ndarray:
    """Addytywny szum Gaussa; gray=True dodaje jedno pole szumu do wszystkich kanałów."""
    if sigma < 0:
        raise DegradationError(f"Odchylenie szumu musi być nieujemne, jest {sigma}")
    if sigma == 0:
        return image.copy()
    if gray and image.ndim == 3:
        noise = rng.normal(image.shape[:2] + (1,), dtype=np.float64)
    else:
        noise = rng.normal(image.shape, dtype=np.float64)
    noisy = image.astype(np.float64) + sigma * noise
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype)


# ==================== Etapy ====================

@dataclass
class Blur:
    sigma_x: float
    sigma_y: float
    theta: float
    size: int
    type: str = field(default="blur", init=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": self.type,
            "sigma_x": self.sigma_x,
            "sigma_y": self.sigma_y,
            "theta": self.theta,
            "size": self.size,
        }


@dataclass
class Resize:
    scale: float
    filter: str = "bicubic"
    size: Optional[Size] = None  # Konkretny rozmiar wyjściowy (H, W)
    type: str = field(default="resize", init=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": self.type,
            "scale": self.scale,
            "filter": self.filter,
            "size": list(self.size) if self.size is not None else None,
        }


@dataclass
class GaussianNoise:
    sigma: float
    gray: bool = False
    type: str = field(default="noise", init=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": self.type, "sigma": self.sigma, "gray": self.gray}


@dataclass
class Jpeg:
    quality: int
    type: str = field(default="jpeg", init=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"type": self.type, "quality": self.quality}


StageSpec = Union[Blur, Resize, GaussianNoise, Jpeg]


def stage_from_dict(data: Dict[str, Any]) -> StageSpec:
    kind = data.get("type")
    if kind == "blur":
        return Blur(data["sigma_x"], data["sigma_y"], data["theta"], int(data["size"]))
    if kind == "resize":
        size = data.get("size")
        return Resize(
            data["scale"], data.get("filter", "bicubic"), tuple(size) if size else None
        )
    if kind == "noise":
        return GaussianNoise(data["sigma"], bool(data.get("gray", False)))
    if kind == "jpeg":
        return Jpeg(int(data["quality"]))
    raise DegradationError(f"Nieznany typ etapu: {kind}")


@dataclass
class DegradationSample:
    """Zrealizowana degradacja: lista etapów z parametrami i ziarno."""
    kind: DegradationKind
    stages: List[StageSpec]
    seed: int
    input_size: Optional[Size] = None
    target_size: Optional[Size] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "input_size": list(self.input_size) if self.input_size else None,
            "target_size": list(self.target_size) if self.target_size else None,
            "stages": [stage.to_dict() for stage in self.stages],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DegradationSample":
        return cls(
            kind=DegradationKind(data["kind"]),
            stages=[stage_from_dict(s) for s in data.get("stages", [])],
            seed=int(data["seed"]),
            input_size=tuple(data["input_size"]) if data.get("input_size") else None,
            target_size=tuple(data["target_size"]) if data.get("target_size") else None,
        )


# ==================== Zakresy parametrów ====================

@dataclass
class DegradationRanges:
    """Zakresy losowania parametrów etapów."""
    target_scale: float = 0.5
    blur_sigma: Tuple[float, float] = (0.2, 3.0)
    kernel_sizes: Sequence[int] = (7, 9, 11, 13, 15, 17, 19, 21)
    theta: Tuple[float, float] = (0.0, math.pi)
    downscale: Tuple[float, float] = (1.0, 4.0)
    noise_sigma: Tuple[float, float] = (1.0 / 255.0, 30.0 / 255.0)
    gray_noise_prob: float = 0.4
    jpeg_quality: Tuple[int, int] = (30, 95)
    resize_filters: Sequence[str] = ("bicubic", "bilinear", "area")
    second_round_attenuation: float = 0.5
    second_round_prob: float = 0.8
    min_side: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def _range(name: str, lo: float, hi: float, low_bound: float = 0.0) -> None:
            if not (low_bound <= lo <= hi):
                raise DegradationError(f"Niepoprawny zakres {name}: [{lo}, {hi}]")

        if self.target_scale <= 0:
            raise DegradationError(f"target_scale musi być dodatnie, jest {self.target_scale}")
        _range("blur_sigma", *self.blur_sigma)
        if self.blur_sigma[0] <= 0:
            raise DegradationError("Dolna granica blur_sigma musi być dodatnia")
        if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise DegradationError(f"Rozmiary jąder muszą być nieparzyste: {self.kernel_sizes}")
        _range("theta", *self.theta, low_bound=-math.inf)
        _range("downscale", *self.downscale)
        if self.downscale[0] <= 0:
            raise DegradationError("Dolna granica downscale musi być dodatnia")
        _range("noise_sigma", *self.noise_sigma)
        _range("jpeg_quality", *self.jpeg_quality, low_bound=1)
        if self.jpeg_quality[1] > 100:
            raise DegradationError(f"Jakość JPEG powyżej 100: {self.jpeg_quality}")
        if not 0.0 <= self.gray_noise_prob <= 1.0 or not 0.0 <= self.second_round_prob <= 1.0:
            raise DegradationError("Prawdopodobieństwa muszą leżeć w [0, 1]")
        if not self.resize_filters or any(f not in RESIZE_FILTERS for f in self.resize_filters):
            raise DegradationError(f"Nieznane filtry: {self.resize_filters}")

    def attenuated(self) -> "DegradationRanges":
        """Zakresy drugiej rundy: rozmycie i szum przeskalowane współczynnikiem tłumienia."""
        factor = self.second_round_attenuation
        return DegradationRanges(
            target_scale=self.target_scale,
            blur_sigma=(self.blur_sigma[0] * factor, self.blur_sigma[1] * factor),
            kernel_sizes=self.kernel_sizes,
            theta=self.theta,
            downscale=(1.0, 1.0 + (self.downscale[1] - 1.0) * factor),
            noise_sigma=(self.noise_sigma[0] * factor, self.noise_sigma[1] * factor),
            gray_noise_prob=self.gray_noise_prob,
            jpeg_quality=self.jpeg_quality,
            resize_filters=self.resize_filters,
            second_round_attenuation=factor,
            second_round_prob=self.second_round_prob,
            min_side=self.min_side,
        )

    @classmethod
    def from_settings(cls, settings) -> "DegradationRanges":
        return cls(
            target_scale=settings.target_scale,
            blur_sigma=tuple(settings.blur_sigma),
            kernel_sizes=tuple(settings.kernel_sizes),
            downscale=tuple(settings.downscale),
            noise_sigma=tuple(settings.noise_sigma),
            gray_noise_prob=settings.gray_noise_prob,
            jpeg_quality=tuple(settings.jpeg_quality),
            resize_filters=tuple(settings.resize_filters),
            second_round_attenuation=settings.second_round_attenuation,
            second_round_prob=settings.second_round_prob,
            min_side=settings.min_side,
        )


# ==================== Losowanie potoków ====================

def _sample_blur(rng: Rng, ranges: DegradationRanges) -> Blur:
    return Blur(
        sigma_x=rng.uniform(*ranges.blur_sigma),
        sigma_y=rng.uniform(*ranges.blur_sigma),
        theta=rng.uniform(*ranges.theta),
        size=int(rng.choice(list(ranges.kernel_sizes))),
    )


def _sample_noise(rng: Rng, ranges: DegradationRanges) -> GaussianNoise:
    return GaussianNoise(
        sigma=rng.uniform(*ranges.noise_sigma),
        gray=rng.bernoulli(ranges.gray_noise_prob),
    )


def _sample_jpeg(rng: Rng, ranges: DegradationRanges) -> Jpeg:
    return Jpeg(quality=rng.integers(*ranges.jpeg_quality))


def _sized(size: Size, scale: float, min_side: int) -> Size:
    h, w = output_size(size, scale)
    return max(min_side, h), max(min_side, w)


def target_size_for(input_size: Size, ranges: DegradationRanges) -> Size:
    """Rozdzielczość LQ dla danego wejścia HQ."""
    return output_size(input_size, ranges.target_scale)


def sample_pipeline(
    kind: Union[DegradationKind, str],
    rng: Rng,
    ranges: Optional[DegradationRanges] = None,
    input_size: Size = (64, 64),
) -> DegradationSample:
    """
    Wylosuj konkretną degradację danej rodziny.

    high_order to dwie rundy klasyczne: runda 1 (blur, resize, szum, JPEG),
    opcjonalna runda 2 o osłabionych zakresach (blur, resize, szum), a po niej
    resize do rozdzielczości docelowej i JPEG zamykający rundę 2. Bez rundy 2
    ten sam ogon kończy potok, więc zawsze są dokładnie dwa etapy JPEG.

    Args:
        kind: bicubic | classical | shuffle | high_order
        rng: strumień losowy (zużywany przez losowanie parametrów)
        ranges: zakresy parametrów
        input_size: rozmiar obrazu HQ (H, W)
    """
    kind = DegradationKind(kind)
    ranges = ranges or DegradationRanges()
    seed = rng.integers(0, (1 << 62) - 1)
    target = target_size_for(input_size, ranges)
    filters = list(ranges.resize_filters)

    stages: List[StageSpec]
    if kind == DegradationKind.BICUBIC:
        stages = [Resize(ranges.target_scale, "bicubic", target)]

    elif kind == DegradationKind.CLASSICAL:
        stages = [
            _sample_blur(rng, ranges),
            Resize(ranges.target_scale, rng.choice(filters), target),
            _sample_noise(rng, ranges),
            _sample_jpeg(rng, ranges),
        ]

    elif kind == DegradationKind.SHUFFLE:
        core: List[StageSpec] = [
            _sample_blur(rng, ranges),
            Resize(ranges.target_scale, rng.choice(filters), target),
            _sample_noise(rng, ranges),
        ]
        stages = [core[i] for i in rng.permutation(len(core))]
        stages.append(_sample_jpeg(rng, ranges))

    else:
        current = tuple(input_size)
        factor = rng.uniform(*ranges.downscale)
        first_size = _sized(current, 1.0 / factor, ranges.min_side)
        stages = [
            _sample_blur(rng, ranges),
            Resize(1.0 / factor, rng.choice(filters), first_size),
            _sample_noise(rng, ranges),
            _sample_jpeg(rng, ranges),
        ]
        current = first_size
        if rng.bernoulli(ranges.second_round_prob):
            weak = ranges.attenuated()
            factor = rng.uniform(*weak.downscale)
            second_size = _sized(current, 1.0 / factor, ranges.min_side)
            stages += [
                _sample_blur(rng, weak),
                Resize(1.0 / factor, rng.choice(filters), second_size),
                _sample_noise(rng, weak),
            ]
            current = second_size
        final_scale = target[0] / current[0]
        stages += [
            Resize(final_scale, rng.choice(filters), target),
            _sample_jpeg(rng, ranges),
        ]

    logger.debug(f"Wylosowano degradację {kind.value}: {len(stages)} etapów")
    return DegradationSample(kind, stages, seed, tuple(input_size), target)


# ==================== Zastosowanie ====================

def apply_stage(image: np.ndarray, stage: StageSpec, rng: Rng) -> np.ndarray:
    """Zastosuj pojedynczy etap."""
    if isinstance(stage, Blur):
        kernel = anisotropic_gaussian_kernel(stage.sigma_x, stage.sigma_y, stage.theta, stage.size)
        return np.clip(convolve2d_reflect(image, kernel), 0.0, 1.0)
    if isinstance(stage, Resize):
        if stage.size is not None:
            out = resize_to(image, stage.size, stage.filter)
        else:
            out = resize(image, stage.scale, stage.filter)
        return np.clip(out, 0.0, 1.0)
    if isinstance(stage, GaussianNoise):
        return add_gaussian_noise(image, stage.sigma, stage.gray, rng)
    if isinstance(stage, Jpeg):
        return jpeg_roundtrip(image, stage.quality)
    raise DegradationError(f"Nieznany etap: {stage!r}")


def apply(image: np.ndarray, sample: DegradationSample, rng: Optional[Rng] = None) -> np.ndarray:
    """
    x = d(y): zastosuj etapy po kolei.

    Etap i korzysta ze strumienia rng.child(i); domyślnie rng = Rng(sample.seed),
    więc (obraz, próbka) wyznacza wynik bit w bit.
    """
    if sample.input_size is not None and tuple(image.shape[:2]) != tuple(sample.input_size):
        raise DegradationError(
            f"Obraz {image.shape[:2]} nie pasuje do próbki dla {tuple(sample.input_size)}"
        )
    rng = rng or Rng(sample.seed)
    out = image.astype(np.float32, copy=True)
    for index, stage in enumerate(sample.stages):
        out = apply_stage(out, stage, rng.child(index))
    return out.astype(np.float32)
