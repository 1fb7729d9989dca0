"""
Moduł JPEG - Kompresja w Pamięci
================================
Obsługuje:
- Tablice kwantyzacji (Annex K) skalowane jakością 1..100
- Konwersję RGB ↔ YCbCr (JFIF)
- Kodowanie/dekodowanie blokami 8×8 DCT bez podpróbkowania chrominancji (4:4:4)

Kodowanie entropijne pominięte: nie wpływa na zniekształcenia.
"""

import numpy as np
from scipy.fft import dctn, idctn

from lqsynth.core.errors import DegradationError

BLOCK = 8

LUMINANCE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

CHROMINANCE_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


def quantization_table(quality: int, chroma: bool = False) -> np.ndarray:
    """Tablica kwantyzacji dla jakości 1..100 (jakość 100 → same jedynki)."""
    if not 1 <= int(quality) <= 100:
        raise DegradationError(f"Jakość JPEG poza zakresem 1..100: {quality}")
    quality = int(quality)
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    base = CHROMINANCE_TABLE if chroma else LUMINANCE_TABLE
    return np.clip((base * scale + 50) // 100, 1, 255).astype(np.float64)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """RGB (0..255) → YCbCr (0..255) wg JFIF."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    """YCbCr (0..255) → RGB (0..255) wg JFIF."""
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _code_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Kwantyzacja DCT jednej płaszczyzny (wymiary podzielne przez 8)."""
    h, w = plane.shape
    blocks = (plane - 128.0).reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)
    coef = dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
    coef = np.round(coef / table) * table
    rec = idctn(coef, type=2, norm="ortho", axes=(-2, -1)) + 128.0
    rec = rec.transpose(0, 2, 1, 3).reshape(h, w)
    return np.clip(np.round(rec), 0.0, 255.0)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """
    Zakoduj i zdekoduj obraz jak JPEG o danej jakości.

    Args:
        image: (H, W, 3) lub (H, W) w [0, 1]
        quality: 1..100

    Returns:
        Obraz tego samego kształtu w [0, 1], kwantowany do 8 bitów
    """
    luma_table = quantization_table(quality)
    chroma_table = quantization_table(quality, chroma=True)

    gray = image.ndim == 2
    pixels = np.round(np.clip(image, 0.0, 1.0).astype(np.float64) * 255.0)
    h, w = pixels.shape[:2]
    pad_h = (-h) % BLOCK
    pad_w = (-w) % BLOCK
    pad = ((0, pad_h), (0, pad_w)) if gray else ((0, pad_h), (0, pad_w), (0, 0))
    pixels = np.pad(pixels, pad, mode="edge")

    if gray:
        decoded = _code_plane(pixels, luma_table)
    else:
        ycc = rgb_to_ycbcr(pixels)
        planes = [
            _code_plane(ycc[..., 0], luma_table),
            _code_plane(ycc[..., 1], chroma_table),
            _code_plane(ycc[..., 2], chroma_table),
        ]
        decoded = np.clip(np.round(ycbcr_to_rgb(np.stack(planes, axis=-1))), 0.0, 255.0)

    decoded = decoded[:h, :w]
    return (decoded / 255.0).astype(image.dtype if np.issubdtype(image.dtype, np.floating) else np.float32)
