"""
Wspólne fixtures testów
=======================
Małe deterministyczne obrazy, miniaturowe konfiguracje UNet i krótki harmonogram.
"""

import numpy as np
import pytest

from lqsynth.core.denoiser import DenoiserModel, UNetConfig
from lqsynth.core.diffusion import DiffusionConfig, linear_schedule
from lqsynth.core.rng import Rng
from lqsynth.modules.data_io import procedural_texture, save_image


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def sched():
    """Domyślny harmonogram T=1000."""
    return linear_schedule()


@pytest.fixture
def short_sched():
    """Krótki harmonogram do szybkich testów łańcucha odwrotnego."""
    return linear_schedule(config=DiffusionConfig(total_steps=50, t_max_face=50, t_max_natural=25))


@pytest.fixture
def tiny_config():
    """Miniaturowy UNet: base 8, mnożniki [1, 2], jeden blok na poziom."""
    return UNetConfig(
        in_channels=3,
        base_channels=8,
        channel_mults=[1, 2],
        res_blocks_per_level=1,
        time_embed_dim=32,
        norm_groups=4,
        total_steps=1000,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return DenoiserModel.init(tiny_config, Rng(7))


@pytest.fixture
def texture():
    """Obraz 32x32 RGB w [0, 1]."""
    return procedural_texture(Rng(99), 32)


@pytest.fixture
def textures():
    return [procedural_texture(Rng(99).child(i), 32) for i in range(6)]


@pytest.fixture
def image_dir(tmp_path, textures):
    """Katalog z kilkoma PNG."""
    directory = tmp_path / "images"
    for i, image in enumerate(textures):
        save_image(image, directory / f"{i:03d}.png")
    return directory


@pytest.fixture
def random_image():
    gen = np.random.default_rng(5)
    return gen.uniform(0.0, 1.0, size=(16, 16, 3)).astype(np.float32)
