"""
Moduł Metryk - Jakość Obrazu i Odległość Rozkładów
==================================================
Obsługuje:
- PSNR i SSIM (luma, okno Gaussa 11×11, σ=1.5)
- Ekstraktory cech: statystyki łatek oraz aktywacje denoisera
- Statystyki cech i odległość Frécheta
- Krzywe odległość/PSNR w funkcji kroku dyfuzji t (zapis i odczyt CSV)
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg, signal, stats

from lqsynth.core.errors import DimensionError, InsufficientSamplesError, StatisticsError

PSNR_CAP_DB = 99.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
CURVE_COLUMNS = ["pipeline_kind", "t", "frechet", "psnr_mean", "psnr_std", "n"]


# ==================== PSNR / SSIM ====================

def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10·log10(max²/MSE); identyczne obrazy → 99 dB."""
    if a.shape != b.shape:
        raise DimensionError(f"psnr: niezgodne wymiary {a.shape} i {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_val ** 2 / mse))


def to_luma(image: np.ndarray) -> np.ndarray:
    """Jasność wg wag BT.601; obrazy 2D zwracane bez zmian."""
    if image.ndim == 2:
        return image.astype(np.float64)
    if image.shape[-1] == 1:
        return image[..., 0].astype(np.float64)
    return image.astype(np.float64) @ LUMA_WEIGHTS


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Średni lokalny SSIM po poprawnych pozycjach okna (na kanale luma)."""
    if a.shape != b.shape:
        raise DimensionError(f"ssim: niezgodne wymiary {a.shape} i {b.shape}")
    x, y = to_luma(a), to_luma(b)
    if x.shape[0] < window_size or x.shape[1] < window_size:
        raise DimensionError(f"ssim: obraz {x.shape} mniejszy niż okno {window_size}")

    window = gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def _filter(img: np.ndarray) -> np.ndarray:
        return signal.convolve2d(img, window, mode="valid")

    mu_x, mu_y = _filter(x), _filter(y)
    sigma_x = _filter(x * x) - mu_x ** 2
    sigma_y = _filter(y * y) - mu_y ** 2
    sigma_xy = _filter(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (sigma_x + sigma_y + c2)
    )
    return float(ssim_map.mean())


# ==================== Ekstraktory cech ====================

@dataclass
class PatchStats:
    """
    Cechy łatek luma: średnia, wariancja, średni moduł gradientu
    i histogram orientacji gradientu ważony modułem.

    Dla każdego kroku łatki zapisywana jest średnia i odchylenie każdej cechy
    po łatkach, więc d = 2 · len(strides) · (3 + histogram_bins).
    """
    patch_size: int = 8
    strides: Sequence[int] = (8,)
    histogram_bins: int = 8
    kind: str = field(default="patch_stats", init=False)

    @property
    def dim(self) -> int:
        return 2 * len(self.strides) * (3 + self.histogram_bins)

    def _patch_features(self, luma: np.ndarray, stride: int) -> np.ndarray:
        gy, gx = np.gradient(luma)
        magnitude = np.hypot(gx, gy)
        orientation = np.mod(np.arctan2(gy, gx), np.pi)
        bins = np.minimum(
            (orientation / np.pi * self.histogram_bins).astype(np.int64),
            self.histogram_bins - 1,
        )

        size = self.patch_size
        if luma.shape[0] < size or luma.shape[1] < size:
            raise DimensionError(f"Obraz {luma.shape} mniejszy niż łatka {size}")

        def _windows(arr: np.ndarray) -> np.ndarray:
            view = sliding_window_view(arr, (size, size))[::stride, ::stride]
            return view.reshape(-1, size * size)

        values = _windows(luma)
        mags = _windows(magnitude)
        bin_idx = _windows(bins)
        hist = np.zeros((values.shape[0], self.histogram_bins))
        for b in range(self.histogram_bins):
            hist[:, b] = np.where(bin_idx == b, mags, 0.0).sum(axis=1)
        hist /= size * size

        return np.column_stack([values.mean(axis=1), values.var(axis=1), mags.mean(axis=1), hist])

    def extract_one(self, image: np.ndarray) -> np.ndarray:
        luma = to_luma(image)
        parts = []
        for stride in self.strides:
            feats = self._patch_features(luma, int(stride))
            parts.append(feats.mean(axis=0))
            parts.append(feats.std(axis=0))
        return np.concatenate(parts)

    def extract(self, images: Sequence[np.ndarray]) -> np.ndarray:
        return np.stack([self.extract_one(img) for img in images])


@dataclass
class DenoiserFeatures:
    """
    Aktywacje enkodera denoisera na poziomie `level` dla obrazu
    zaszumionego do kroku t stałym szumem; średnia i odchylenie per kanał.
    """
    model: Any
    sched: Any
    t: int = 50
    level: int = 1
    seed: int = 0
    kind: str = field(default="denoiser_features", init=False)

    @property
    def dim(self) -> int:
        return 2 * self.model.config.level_channels()[self.level]

    def extract(self, images: Sequence[np.ndarray]) -> np.ndarray:
        from lqsynth.core.diffusion import forward_diffuse
        from lqsynth.core.rng import Rng
        from lqsynth.core.tensor import Tensor, default_dtype

        rows = []
        for index, image in enumerate(images):
            x = Tensor((2.0 * image.transpose(2, 0, 1)[None] - 1.0).astype(default_dtype()))
            eps = Tensor(Rng(self.seed).child(index).normal(x.dims, dtype=default_dtype()))
            x_t = forward_diffuse(x, self.t, eps, self.sched)
            acts = self.model.features(x_t, np.array([self.t - 1]), self.level)[0]
            flat = acts.reshape(acts.shape[0], -1).astype(np.float64)
            rows.append(np.concatenate([flat.mean(axis=1), flat.std(axis=1)]))
        return np.stack(rows)


Extractor = Union[PatchStats, DenoiserFeatures]


def extract_features(images: Sequence[np.ndarray], kind: Extractor) -> np.ndarray:
    """Macierz cech (jeden wiersz na obraz)."""
    if len(images) == 0:
        raise InsufficientSamplesError("Brak obrazów do ekstrakcji cech")
    return kind.extract(images)


def make_extractor(settings, model=None, sched=None) -> Extractor:
    """Ekstraktor wg ustawień metryk."""
    if settings.extractor == "patch_stats":
        return PatchStats(settings.patch_size, tuple(settings.strides), settings.histogram_bins)
    if settings.extractor == "denoiser_features":
        if model is None or sched is None:
            raise ValueError("Cechy denoisera wymagają modelu i harmonogramu")
        return DenoiserFeatures(model, sched, settings.denoiser_t, settings.denoiser_level)
    raise ValueError(f"Nieznany ekstraktor: {settings.extractor}")


# ==================== Statystyki i odległość Frécheta ====================

@dataclass
class FeatureStats:
    """Średnia i kowariancja cech."""
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureStats":
        return cls(
            mean=np.asarray(data["mean"], dtype=np.float64),
            covariance=np.asarray(data["covariance"], dtype=np.float64),
            sample_count=int(data["sample_count"]),
        )


def fit_stats(features: np.ndarray) -> FeatureStats:
    """Średnia i nieobciążona kowariancja wierszy macierzy cech."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise InsufficientSamplesError(
            f"Potrzeba co najmniej 2 próbek, jest {features.shape[0] if features.ndim else 0}"
        )
    n, d = features.shape
    if n < d:
        logger.warning(f"Mało próbek do estymacji kowariancji: {n} < {d}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    return FeatureStats(mean=mean, covariance=0.5 * (cov + cov.T), sample_count=n)


def _psd_eigenvalues(matrix: np.ndarray, tolerance: float = 1e-6) -> tuple:
    """Wartości własne macierzy symetrycznej; małe ujemne przycinane do 0."""
    values, vectors = linalg.eigh(0.5 * (matrix + matrix.T))
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    if values.min(initial=0.0) < -tolerance * scale:
        raise StatisticsError(f"Macierz nie jest dodatnio półokreślona (λmin={values.min():.3e})")
    return np.clip(values, 0.0, None), vectors


def frechet_distance(s1: FeatureStats, s2: FeatureStats, eps: float = 1e-6) -> float:
    """
    ‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½).

    Pierwiastek liczony przez rozkład własny Σ₁^½ Σ₂ Σ₁^½; do obu kowariancji
    dodawane jest eps·I.
    """
    if s1.dim != s2.dim:
        raise DimensionError(f"Niezgodne wymiary cech: {s1.dim} i {s2.dim}")
    identity = np.eye(s1.dim)
    cov1 = s1.covariance + eps * identity
    cov2 = s2.covariance + eps * identity

    values1, vectors1 = _psd_eigenvalues(cov1)
    sqrt1 = (vectors1 * np.sqrt(values1)) @ vectors1.T
    middle, _ = _psd_eigenvalues(sqrt1 @ cov2 @ sqrt1)
    trace_sqrt = float(np.sqrt(middle).sum())

    diff = s1.mean - s2.mean
    distance = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * trace_sqrt)
    return max(distance, 0.0)


# ==================== Krzywe w funkcji t ====================

@dataclass
class CurvePoint:
    """Jeden wiersz tabeli krzywych."""
    pipeline_kind: str
    t: int
    frechet: Optional[float]
    psnr_mean: Optional[float]
    psnr_std: Optional[float] = None
    n: Optional[int] = None

    def to_row(self) -> List[str]:
        def _fmt(value) -> str:
            return "" if value is None else (f"{value:.6f}" if isinstance(value, float) else str(value))

        return [
            self.pipeline_kind,
            str(self.t),
            _fmt(self.frechet),
            _fmt(self.psnr_mean),
            _fmt(self.psnr_std),
            _fmt(self.n),
        ]


def write_curves_csv(points: Sequence[CurvePoint], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_COLUMNS)
        for point in points:
            writer.writerow(point.to_row())
    return path


def load_curves_csv(path: Path) -> List[CurvePoint]:
    """Wczytaj i zwaliduj tabelę krzywych; wiersze zaczynające się od # są pomijane."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(line for line in f if not line.startswith("#"))
        header = next(reader, None)
        if header != CURVE_COLUMNS:
            raise ValueError(f"{path}: niepoprawny nagłówek {header}")
        points = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(CURVE_COLUMNS):
                raise ValueError(f"{path}:{line_no}: oczekiwano {len(CURVE_COLUMNS)} kolumn")

            def _opt(value: str, cast):
                return cast(value) if value.strip() else None

            points.append(
                CurvePoint(
                    pipeline_kind=row[0],
                    t=int(row[1]),
                    frechet=_opt(row[2], float),
                    psnr_mean=_opt(row[3], float),
                    psnr_std=_opt(row[4], float),
                    n=_opt(row[5], int),
                )
            )
    return points


def reference_curves_path() -> Path:
    """Referencyjne punkty krzywych (do testów formatu i wykresów)."""
    return Path(__file__).resolve().parents[2] / "reference" / "reference_curves.csv"


def load_reference_curves(path: Optional[Path] = None) -> List[CurvePoint]:
    """
    Opublikowane punkty krzywych w pełnej skali (FID na cechach Inception).
    Służą do porównania kształtu krzywych; wartości bezwzględne nie są
    celami dla przebiegów na korpusie toy.
    """
    return load_curves_csv(path or reference_curves_path())


def trend_summary(points: Sequence[CurvePoint]) -> Dict[str, Dict[str, float]]:
    """Korelacja Spearmana odległości i PSNR z t dla każdej rodziny."""
    summary: Dict[str, Dict[str, float]] = {}
    for kind in sorted({p.pipeline_kind for p in points}):
        rows = sorted((p for p in points if p.pipeline_kind == kind), key=lambda p: p.t)
        entry: Dict[str, float] = {}
        for attr in ("frechet", "psnr_mean"):
            pairs = [(p.t, getattr(p, attr)) for p in rows if getattr(p, attr) is not None]
            if len(pairs) >= 3:
                ts, values = zip(*pairs)
                entry[attr] = float(stats.spearmanr(ts, values).correlation)
        summary[kind] = entry
    return summary


def sweep_curves(
    hq_set: Sequence[np.ndarray],
    real_lq_stats: FeatureStats,
    model,
    sched,
    kinds: Sequence[str],
    t_grid: Sequence[int],
    extractor: Extractor,
    ranges=None,
    seed: int = 0,
    deterministic: bool = False,
    covariance_eps: float = 1e-6,
) -> List[CurvePoint]:
    """
    Dla każdej pary (rodzina, t) zsyntetyzuj LQ przy stałym t i policz
    odległość Frécheta do statystyk korpusu oraz PSNR względem HQ
    przeskalowanego do rozdzielczości LQ.

    Ta sama próbka degradacji obrazu jest używana dla wszystkich t.
    """
    from lqsynth.core.rng import Rng
    from lqsynth.modules.degradations import (
        DegradationKind,
        DegradationRanges,
        sample_pipeline,
    )
    from lqsynth.modules.synthesis import structure_guard, synthesize_at

    ranges = ranges or DegradationRanges()
    master = Rng(seed)
    points: List[CurvePoint] = []
    for kind in kinds:
        kind = DegradationKind(kind).value
        samples = [
            sample_pipeline(kind, master.child(f"{kind}:degradation").child(i), ranges, hq.shape[:2])
            for i, hq in enumerate(hq_set)
        ]
        for t in t_grid:
            lqs, scores = [], []
            for i, hq in enumerate(hq_set):
                rng = master.child(f"{kind}:t{t}").child(i)
                lq = synthesize_at(hq, samples[i], int(t), model, sched, rng, deterministic)
                lqs.append(lq)
                scores.append(structure_guard(hq, lq, 0.0).measured_db)
            stats_lq = fit_stats(extract_features(lqs, extractor))
            distance = frechet_distance(stats_lq, real_lq_stats, eps=covariance_eps)
            point = CurvePoint(
                pipeline_kind=str(kind),
                t=int(t),
                frechet=distance,
                psnr_mean=float(np.mean(scores)),
                psnr_std=float(np.std(scores)),
                n=len(lqs),
            )
            logger.info(
                f"Krzywa {point.pipeline_kind} t={t}: FD={distance:.4f}, PSNR={point.psnr_mean:.2f} dB"
            )
            points.append(point)
    return points
