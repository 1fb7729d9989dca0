"""Testy obrazów, checkpointów, manifestów i korpusu zabawkowego."""

import json
import struct

import numpy as np
import pytest
from PIL import Image
from scipy import stats

from lqsynth.config.settings import ToyCorpusSettings
from lqsynth.core.denoiser import DenoiserModel
from lqsynth.core.diffusion import DiffusionConfig
from lqsynth.core.errors import CheckpointError, DimensionError, ImageDecodeError
from lqsynth.core.optim import AdamState
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import set_default_dtype
from lqsynth.modules.data_io import (
    CHECKPOINT_MAGIC,
    Checkpoint,
    DatasetManifest,
    file_sha256,
    list_images,
    load_checkpoint,
    load_image,
    make_hq_set,
    make_toy_did,
    procedural_texture,
    random_crop,
    save_checkpoint,
    save_image,
    write_run_record,
)
from lqsynth.modules.degradations import resize_to
from lqsynth.modules.metrics import psnr


@pytest.fixture
def toy_settings():
    return ToyCorpusSettings(corpus_size=10, image_size=32)


class TestImages:
    """Odczyt i zapis PNG."""

    def test_roundtrip_quantization(self, random_image, tmp_path):
        path = save_image(random_image, tmp_path / "a.png")
        loaded = load_image(path)
        assert loaded.dtype == np.float32
        assert loaded.shape == random_image.shape
        assert np.abs(loaded - random_image).max() <= 1.0 / 510.0 + 1e-6

    def test_extremes_exact(self, tmp_path):
        image = np.zeros((4, 4, 3), dtype=np.float32)
        image[:2] = 1.0
        loaded = load_image(save_image(image, tmp_path / "ext.png"))
        np.testing.assert_array_equal(loaded, image)

    def test_known_bytes(self, tmp_path):
        pixels = np.array(
            [[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [128, 128, 128]]], dtype=np.uint8
        )
        Image.fromarray(pixels).save(tmp_path / "known.png")
        loaded = load_image(tmp_path / "known.png")
        np.testing.assert_allclose(loaded * 255.0, pixels, atol=1e-4)
        save_image(loaded, tmp_path / "again.png")
        with Image.open(tmp_path / "again.png") as img:
            np.testing.assert_array_equal(np.asarray(img), pixels)

    def test_grayscale_promoted_to_rgb(self, tmp_path):
        Image.fromarray(np.full((3, 5), 200, dtype=np.uint8)).save(tmp_path / "g.png")
        assert load_image(tmp_path / "g.png").shape == (3, 5, 3)

    def test_decode_error(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"\x89PNG garbage")
        with pytest.raises(ImageDecodeError):
            load_image(bad)

    def test_list_images_sorted(self, image_dir):
        (image_dir / "notes.txt").write_text("x")
        names = [p.name for p in list_images(image_dir)]
        assert names == sorted(names)
        assert len(names) == 6


class TestCrop:
    def test_full_size_is_identity(self, texture, rng):
        np.testing.assert_array_equal(random_crop(texture, 32, rng), texture)

    def test_same_seed_same_crop(self, texture):
        a = random_crop(texture, 8, Rng(3))
        b = random_crop(texture, 8, Rng(3))
        assert a.shape == (8, 8, 3)
        np.testing.assert_array_equal(a, b)

    def test_too_small(self, texture, rng):
        with pytest.raises(DimensionError):
            random_crop(texture, 33, rng)

    def test_origins_uniform(self):
        h, w, size = 12, 10, 8
        rows, cols = np.mgrid[0:h, 0:w]
        coded = np.stack([rows, cols, np.zeros_like(rows)], axis=-1).astype(np.float32) / 255.0
        rng = Rng(17)
        counts = np.zeros((h - size + 1, w - size + 1), dtype=np.int64)
        for _ in range(6000):
            crop = random_crop(coded, size, rng)
            top, left = np.rint(crop[0, 0, :2] * 255.0).astype(int)
            counts[top, left] += 1
        assert counts.min() > 0
        assert stats.chisquare(counts.ravel()).pvalue > 1e-3

class TestCheckpoint:
    """Format DGDF."""

    def _checkpoint(self, model):
        adam = AdamState(
            step=3,
            m={n: np.full(p.dims, 0.5, dtype=np.float32) for n, p in model.parameters().items()},
            v={n: np.full(p.dims, 0.25, dtype=np.float32) for n, p in model.parameters().items()},
        )
        return Checkpoint(model=model, diffusion=DiffusionConfig(), step=42, adam=adam)

    def test_loads_into_configured_dtype(self, tiny_model, tmp_path):
        path = save_checkpoint(tmp_path / "ckpt.dgdf", self._checkpoint(tiny_model))
        set_default_dtype("float64")
        try:
            loaded = load_checkpoint(path)
        finally:
            set_default_dtype("float32")
        weight = loaded.model.parameters()["conv_in.weight"].data
        assert weight.dtype == np.float64
        np.testing.assert_array_equal(weight, tiny_model.parameters()["conv_in.weight"].data)

    def test_roundtrip_bit_identical(self, tiny_model, tmp_path):
        tiny_model.parameters()["conv_out.weight"].data += 0.125
        tiny_model.update_ema(0.9)
        path = save_checkpoint(tmp_path / "ckpt.dgdf", self._checkpoint(tiny_model))
        loaded = load_checkpoint(path)

        assert loaded.step == 42
        assert loaded.adam.step == 3
        assert loaded.diffusion == DiffusionConfig()
        assert loaded.model.config == tiny_model.config
        for name, p in tiny_model.parameters().items():
            np.testing.assert_array_equal(loaded.model.parameters()[name].data, p.data)
            np.testing.assert_array_equal(
                loaded.model.ema_parameters()[name].data, tiny_model.ema_parameters()[name].data
            )
        np.testing.assert_array_equal(loaded.adam.m["conv_in.weight"], 0.5)
        path2 = save_checkpoint(tmp_path / "ckpt2.dgdf", loaded)
        assert file_sha256(path) == file_sha256(path2)

    def test_no_temp_files_left(self, tiny_model, tmp_path):
        save_checkpoint(tmp_path / "c.dgdf", Checkpoint(tiny_model, DiffusionConfig()))
        assert [p.name for p in tmp_path.iterdir()] == ["c.dgdf"]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dgdf"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_version(self, tiny_model, tmp_path):
        path = save_checkpoint(tmp_path / "v.dgdf", Checkpoint(tiny_model, DiffusionConfig()))
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tiny_model, tmp_path):
        path = save_checkpoint(tmp_path / "t.dgdf", Checkpoint(tiny_model, DiffusionConfig()))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.dgdf")

    def test_magic_prefix(self, tiny_model, tmp_path):
        path = save_checkpoint(tmp_path / "m.dgdf", Checkpoint(tiny_model, DiffusionConfig()))
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC

    def test_loaded_model_trainable(self, tiny_model, tmp_path):
        path = save_checkpoint(tmp_path / "c.dgdf", Checkpoint(tiny_model, DiffusionConfig()))
        model = load_checkpoint(path).model
        assert isinstance(model, DenoiserModel)
        assert not model.frozen
        assert all(p.requires_grad for p in model.parameters().values())


class TestManifest:
    """Manifesty zbiorów."""

    def test_from_directory(self, image_dir):
        manifest = DatasetManifest.from_directory(image_dir)
        assert len(manifest.entries) == 6
        assert manifest.entries[0].width == 32
        manifest.validate()
        assert len(manifest.load_images()) == 6

    def test_save_load(self, image_dir):
        manifest = DatasetManifest.from_directory(image_dir, seed=4)
        manifest.save()
        loaded = DatasetManifest.load(image_dir)
        assert loaded.seed == 4
        assert loaded.to_dict() == manifest.to_dict()

    def test_missing_file(self, image_dir):
        manifest = DatasetManifest.from_directory(image_dir)
        (image_dir / manifest.entries[0].path).unlink()
        with pytest.raises(FileNotFoundError):
            manifest.validate()

    def test_duplicate_path(self, image_dir):
        manifest = DatasetManifest.from_directory(image_dir)
        manifest.entries.append(manifest.entries[0])
        with pytest.raises(ValueError):
            manifest.validate()


class TestToyCorpus:
    """Korpus zabawkowy."""

    def test_texture_deterministic(self):
        a = procedural_texture(Rng(5), 24)
        b = procedural_texture(Rng(5), 24)
        assert a.shape == (24, 24, 3)
        assert a.dtype == np.float32
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, procedural_texture(Rng(6), 24))

    def test_profile_none_copies_clean(self, tmp_path, toy_settings):
        manifest = make_toy_did(tmp_path / "did", toy_settings, seed=1, severity_profile="none")
        assert manifest.profile == "none"
        for entry in manifest.entries:
            corpus = load_image(tmp_path / "did" / entry.path)
            source = load_image(tmp_path / "did" / entry.source)
            np.testing.assert_array_equal(corpus, source)

    def test_heavy_profile(self, tmp_path, toy_settings):
        manifest = make_toy_did(tmp_path / "did", toy_settings, seed=1)
        assert manifest.profile == "heavy"
        assert len(manifest.entries) == 10
        assert [e.split for e in manifest.entries].count("val") == 1
        entry = manifest.entries[0]
        assert (entry.width, entry.height) == (16, 16)
        assert entry.degradation["stages"][-1]["type"] == "jpeg"
        assert (tmp_path / "did" / "manifest.json").exists()

    def test_heavy_profile_is_severe(self, tmp_path, toy_settings):
        manifest = make_toy_did(tmp_path / "did", toy_settings, seed=4)
        scores = []
        for entry in manifest.entries:
            corpus = load_image(tmp_path / "did" / entry.path)
            source = load_image(tmp_path / "did" / entry.source)
            reference = np.clip(resize_to(source, corpus.shape[:2], "bicubic"), 0.0, 1.0)
            scores.append(psnr(corpus, reference))
        assert np.mean(scores) < 28.0

    def test_reproducible(self, tmp_path, toy_settings):
        make_toy_did(tmp_path / "a", toy_settings, seed=9)
        make_toy_did(tmp_path / "b", toy_settings, seed=9)
        for name in ("00000.png", "00009.png"):
            assert (tmp_path / "a" / "corpus" / name).read_bytes() == (
                tmp_path / "b" / "corpus" / name
            ).read_bytes()

    def test_unknown_profile(self, tmp_path, toy_settings):
        with pytest.raises(ValueError):
            make_toy_did(tmp_path, toy_settings, severity_profile="medium")

    def test_hq_set(self, tmp_path):
        manifest = make_hq_set(tmp_path / "hq", count=3, size=32, seed=2)
        assert len(manifest.paths()) == 3
        manifest.validate()


class TestRunRecord:
    def test_contents(self, tiny_model, tmp_path):
        ckpt = save_checkpoint(tmp_path / "c.dgdf", Checkpoint(tiny_model, DiffusionConfig()))
        path = write_run_record(
            tmp_path / "run", "synth", {"t_max": 5}, {"master": 3}, checkpoint=ckpt, extra={"n": 1}
        )
        record = json.loads(path.read_text(encoding="utf-8"))
        assert record["command"] == "synth"
        assert record["seeds"] == {"master": 3}
        assert record["config"] == {"t_max": 5}
        assert record["checkpoint"]["sha256"] == file_sha256(ckpt)
        assert record["n"] == 1
        assert record["version"]
