"""Testy kompresji JPEG w pamięci."""

import numpy as np
import pytest

from lqsynth.core.errors import DegradationError
from lqsynth.modules.jpeg import (
    LUMINANCE_TABLE,
    jpeg_roundtrip,
    quantization_table,
    rgb_to_ycbcr,
    ycbcr_to_rgb,
)
from lqsynth.modules.metrics import psnr


class TestQuantization:
    """Tablice kwantyzacji skalowane jakością."""

    def test_quality_100_is_lossless_table(self):
        assert np.all(quantization_table(100) == 1.0)
        assert np.all(quantization_table(100, chroma=True) == 1.0)

    def test_quality_50_is_base_table(self):
        np.testing.assert_array_equal(quantization_table(50), LUMINANCE_TABLE)

    def test_tables_shrink_with_quality(self):
        for low, high in [(10, 30), (30, 50), (50, 70), (70, 90)]:
            assert np.all(quantization_table(high) <= quantization_table(low))

    @pytest.mark.parametrize("quality", [0, 101, -5])
    def test_out_of_range(self, quality):
        with pytest.raises(DegradationError):
            quantization_table(quality)


class TestColor:
    def test_ycbcr_inverse(self):
        rgb = np.random.default_rng(0).uniform(0, 255, size=(10, 10, 3))
        np.testing.assert_allclose(ycbcr_to_rgb(rgb_to_ycbcr(rgb)), rgb, atol=0.01)


class TestRoundtrip:
    """Kodowanie i dekodowanie."""

    def test_quality_100_grayscale_near_lossless(self):
        gen = np.random.default_rng(1)
        image = gen.uniform(0.0, 1.0, size=(16, 24)).astype(np.float32)
        out = jpeg_roundtrip(image, 100)
        assert out.shape == image.shape
        assert np.abs(out - image).max() <= 4.0 / 255.0 + 1e-6

    def test_constant_mid_gray_exact(self):
        image = np.full((16, 16, 3), 128.0 / 255.0, dtype=np.float32)
        np.testing.assert_allclose(jpeg_roundtrip(image, 30), image, atol=1e-6)

    def test_constant_stays_constant(self):
        image = np.full((16, 16), 0.8, dtype=np.float32)
        out = jpeg_roundtrip(image, 50)
        assert np.ptp(out) == 0.0

    def test_psnr_monotonic_in_quality(self, texture):
        scores = [psnr(texture, jpeg_roundtrip(texture, q)) for q in (90, 70, 50, 30)]
        assert scores == sorted(scores, reverse=True)
        assert scores[0] > scores[-1]

    def test_unaligned_shape_preserved(self, rng):
        image = rng.normal((13, 21, 3)).clip(0, 1).astype(np.float32)
        out = jpeg_roundtrip(image, 75)
        assert out.shape == (13, 21, 3)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_output_on_8bit_grid(self, texture):
        out = jpeg_roundtrip(texture, 60)
        np.testing.assert_allclose(out * 255.0, np.round(out * 255.0), atol=1e-3)
