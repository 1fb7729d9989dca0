"""Testy syntezy par HQ → LQ."""

import json
from pathlib import Path

import numpy as np
import pytest

from lqsynth.config.settings import LqSynthSettings
from lqsynth.core.diffusion import DiffusionConfig
from lqsynth.core.errors import ConfigError, StepRangeError
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import Tensor
from lqsynth.modules.data_io import load_image
from lqsynth.modules.degradations import DegradationKind, apply, resize_to, sample_pipeline
from lqsynth.modules.metrics import psnr
from lqsynth.modules.synthesis import (
    PairManifest,
    PairMeta,
    SynthesisConfig,
    batch_synthesize,
    contact_sheet,
    from_model_range,
    resynthesize,
    sample_unconditional,
    structure_guard,
    synthesize_at,
    synthesize_lq,
    t_sweep,
    to_model_range,
)


def _oracle_for(x0: Tensor, sched):
    """Predyktor zwracający dokładny szum względem znanego x0."""

    def predict(x_t: Tensor, steps: np.ndarray) -> Tensor:
        steps = np.asarray(steps).reshape(-1, 1, 1, 1)
        a = sched.sqrt_alpha_bar[steps]
        b = sched.sqrt_one_minus_alpha_bar[steps]
        return Tensor((x_t.data.astype(np.float64) - a * x0.data) / b)

    return predict


def _config(**kwargs) -> SynthesisConfig:
    defaults = {"pipeline": "bicubic", "t_min": 0, "t_max": 5, "guard_enabled": False}
    defaults.update(kwargs)
    return SynthesisConfig(**defaults)


class TestModelRange:
    def test_roundtrip(self, texture):
        x = to_model_range(texture)
        assert x.dims == (1, 3, 32, 32)
        assert x.data.min() >= -1.0 and x.data.max() <= 1.0
        np.testing.assert_allclose(from_model_range(x), texture, atol=1e-6)

    def test_clips(self):
        out = from_model_range(Tensor(np.full((1, 3, 4, 4), 3.0)))
        assert out.max() == 1.0


class TestGuard:
    """Strażnik struktury."""

    def test_identical_downscale_passes_strict_threshold(self, texture):
        lq = np.clip(resize_to(texture, (16, 16), "bicubic"), 0.0, 1.0)
        result = structure_guard(texture, lq, 99.0)
        assert result.passed
        assert result.measured_db == 99.0

    def test_threshold_boundary(self):
        hq = np.full((32, 32, 3), 0.5, dtype=np.float32)
        lq = np.zeros((16, 16, 3), dtype=np.float32)
        assert structure_guard(hq, lq, 6.02).passed
        assert not structure_guard(hq, lq, 6.03).passed


class TestSynthesizeLq:
    """Synteza pojedynczej pary."""

    def test_step_zero_returns_degraded_input(self, texture, tiny_model, short_sched):
        cfg = _config(pipeline="classical", t_max=0)
        rng = Rng(10)
        lq, meta = synthesize_lq(texture, tiny_model, short_sched, cfg, rng)
        sample = sample_pipeline("classical", rng.child("degradation"), cfg.ranges, texture.shape[:2])
        np.testing.assert_array_equal(lq, apply(texture, sample))
        assert meta.t_used == 0
        assert meta.accepted

    def test_oracle_restores_degraded_input(self, texture, short_sched):
        sample = sample_pipeline("classical", Rng(1), input_size=texture.shape[:2])
        x = apply(texture, sample)
        oracle = _oracle_for(to_model_range(x), short_sched)
        lq = synthesize_at(texture, sample, 30, oracle, short_sched, Rng(2))
        assert psnr(x, lq) >= 40.0

    def test_t_within_bounds(self, texture, tiny_model, short_sched):
        cfg = _config(t_min=2, t_max=6)
        for seed in range(8):
            _, meta = synthesize_lq(texture, tiny_model, short_sched, cfg, Rng(seed))
            assert 2 <= meta.t_initial <= 6
            assert meta.t_used == meta.t_initial

    def test_retries_halve_until_zero(self, texture, tiny_model, short_sched):
        cfg = _config(t_min=4, t_max=4, guard_enabled=True, guard_db=99.0, max_retries=5)
        lq, meta = synthesize_lq(texture, tiny_model, short_sched, cfg, Rng(0))
        assert lq is not None
        assert meta.accepted
        assert meta.t_used == 0
        assert meta.attempt == 3
        assert meta.guard_psnr_db == 99.0

    def test_rejection_after_retries(self, texture, tiny_model, short_sched):
        cfg = _config(
            pipeline="classical", t_min=40, t_max=40, guard_enabled=True, guard_db=99.0, max_retries=3
        )
        lq, meta = synthesize_lq(texture, tiny_model, short_sched, cfg, Rng(0))
        assert lq is None
        assert not meta.accepted
        assert meta.t_used == 5
        assert meta.attempt == 3
        assert "PSNR" in meta.reason

    def test_guard_on_accepts_only_faithful_pairs(self, textures, tiny_model, sched):
        cfg = _config(t_min=200, t_max=200, guard_enabled=True, guard_db=24.0, max_retries=8)
        for i, hq in enumerate(textures[:2]):
            lq, meta = synthesize_lq(hq, tiny_model, sched, cfg, Rng(21).child(i))
            assert meta.accepted and lq is not None
            assert meta.guard_psnr_db >= 24.0
            assert structure_guard(hq, lq, 24.0).measured_db == meta.guard_psnr_db
            assert meta.t_used < 200

    def test_guard_off_keeps_inconsistent_pairs(self, textures, tiny_model, sched):
        cfg = _config(t_min=200, t_max=200)
        measured = []
        for i, hq in enumerate(textures[:2]):
            lq, meta = synthesize_lq(hq, tiny_model, sched, cfg, Rng(21).child(i))
            assert meta.accepted and lq is not None
            assert meta.t_used == 200
            measured.append(structure_guard(hq, lq, 24.0).measured_db)
        assert min(measured) < 24.0

    def test_longer_diffusion_moves_further_from_initial_lq(self, texture, tiny_model, short_sched):
        sample = sample_pipeline("classical", Rng(4), input_size=texture.shape[:2])
        x = apply(texture, sample)
        distances = []
        for t in (4, 8, 16, 32):
            trials = []
            for k in range(20):
                lq = synthesize_at(texture, sample, t, tiny_model, short_sched, Rng(t).child(k))
                trials.append(np.mean((lq - x) ** 2))
            distances.append(np.mean(trials))
        assert all(a <= b for a, b in zip(distances, distances[1:])), distances

    def test_invalid_range(self, texture, tiny_model, short_sched):
        with pytest.raises(ConfigError):
            synthesize_lq(texture, tiny_model, short_sched, _config(t_max=51), Rng(0))
        with pytest.raises(ConfigError):
            synthesize_lq(texture, tiny_model, short_sched, _config(t_min=6, t_max=5), Rng(0))

    @pytest.mark.parametrize("deterministic", [False, True])
    def test_resynthesize_reproduces(self, texture, tiny_model, short_sched, deterministic):
        cfg = _config(pipeline="high_order", t_min=3, t_max=8, deterministic_reverse=deterministic)
        lq, meta = synthesize_lq(texture, tiny_model, short_sched, cfg, Rng(77))
        restored = PairMeta.from_dict(json.loads(json.dumps(meta.to_dict())))
        assert restored.deterministic_reverse is deterministic
        np.testing.assert_array_equal(resynthesize(texture, restored, tiny_model, short_sched), lq)

    def test_from_settings_uses_profile(self):
        settings = LqSynthSettings()
        diffusion = DiffusionConfig()
        assert SynthesisConfig.from_settings(settings, diffusion).t_max == 500
        settings.synthesis.profile = "natural"
        assert SynthesisConfig.from_settings(settings, diffusion).t_max == 250
        settings.synthesis.t_max = 123
        assert SynthesisConfig.from_settings(settings, diffusion).t_max == 123


class TestBatch:
    """Synteza wsadowa."""

    async def test_all_pairs_without_guard(self, textures, tiny_model, short_sched):
        hq = textures + textures[:4]
        manifest = await batch_synthesize(hq, tiny_model, short_sched, _config(), master_seed=1)
        assert len(manifest.records) == 10
        assert manifest.acceptance_rate == 1.0
        assert [r.index for r in manifest.records] == list(range(10))

    async def test_parallelism_does_not_change_output(self, image_dir, tiny_model, short_sched, tmp_path):
        paths = sorted(image_dir.glob("*.png"))
        cfg = _config(pipeline="classical", t_max=4)
        serial = await batch_synthesize(
            paths, tiny_model, short_sched, cfg, master_seed=5, parallelism=1, out_dir=tmp_path / "a"
        )
        parallel = await batch_synthesize(
            paths, tiny_model, short_sched, cfg, master_seed=5, parallelism=4, out_dir=tmp_path / "b"
        )
        for a, b in zip(serial.records, parallel.records):
            assert a.meta.to_dict() == b.meta.to_dict()
            np.testing.assert_array_equal(load_image(a.lq_path), load_image(b.lq_path))

    async def test_rerun_is_byte_identical(self, image_dir, tiny_model, short_sched, tmp_path):
        paths = sorted(image_dir.glob("*.png"))
        cfg = _config(pipeline="high_order", t_max=4)
        out = tmp_path / "synth"
        saved = []
        for name in ("first.json", "second.json"):
            manifest = await batch_synthesize(
                paths, tiny_model, short_sched, cfg, master_seed=3, parallelism=2, out_dir=out
            )
            path = manifest.save(tmp_path / name)
            lq_bytes = [Path(r.lq_path).read_bytes() for r in manifest.records if r.accepted]
            saved.append((path.read_bytes(), lq_bytes))
        assert saved[0] == saved[1]
        header = json.loads(saved[0][0])["header"]
        assert set(header) == {"seed", "config", "schedule"}

    async def test_bad_file_recorded(self, image_dir, tiny_model, short_sched):
        broken = image_dir / "broken.png"
        broken.write_bytes(b"not an image")
        paths = sorted(image_dir.glob("*.png"))
        manifest = await batch_synthesize(paths, tiny_model, short_sched, _config())
        failed = [r for r in manifest.records if not r.accepted]
        assert len(failed) == 1
        assert failed[0].hq_path == str(broken)
        assert "ImageDecodeError" in failed[0].reason

    async def test_empty_dataset(self, tiny_model, short_sched):
        with pytest.raises(ConfigError):
            await batch_synthesize([], tiny_model, short_sched, _config())

    async def test_manifest_save_load(self, textures, tiny_model, short_sched, tmp_path):
        cfg = _config(guard_enabled=True, guard_db=99.0, max_retries=0, t_min=3)
        manifest = await batch_synthesize(
            textures, tiny_model, short_sched, cfg, header={"checkpoint": "x.dgdf"}
        )
        path = manifest.save(tmp_path / "pairs.json")
        loaded = PairManifest.load(path)
        assert loaded.header["checkpoint"] == "x.dgdf"
        assert loaded.header["config"]["guard_db"] == 99.0
        assert [r.to_dict() for r in loaded.records] == [r.to_dict() for r in manifest.records]
        assert loaded.acceptance_rate == 0.0
        assert "pairs" in json.loads(path.read_text(encoding="utf-8"))


class TestVisualisation:
    """Arkusz t i próbkowanie bezwarunkowe."""

    def test_t_sweep_and_sheet(self, texture, tiny_model, short_sched, tmp_path):
        panels = t_sweep(texture, tiny_model, short_sched, _config(), Rng(4), t_values=(5, 10))
        assert [label for label, _ in panels] == ["HQ", "d(y)", "t=5", "t=10"]
        path = contact_sheet(panels, tmp_path / "sheet.png", scale=1)
        sheet = load_image(path)
        assert sheet.shape[1] == 4 * 32

    def test_t_sweep_rejects_out_of_range(self, texture, tiny_model, short_sched):
        with pytest.raises(StepRangeError):
            t_sweep(texture, tiny_model, short_sched, _config(), Rng(4), t_values=(500,))

    def test_unconditional_samples(self, tiny_model, short_sched):
        a = sample_unconditional(tiny_model, short_sched, 2, 16, Rng(3))
        b = sample_unconditional(tiny_model, short_sched, 2, 16, Rng(3))
        assert len(a) == 2
        assert a[0].shape == (16, 16, 3)
        assert a[0].min() >= 0.0 and a[0].max() <= 1.0
        np.testing.assert_array_equal(a[1], b[1])
        assert not np.array_equal(a[0], a[1])

    def test_kind_enum_accepted(self):
        assert _config(pipeline=DegradationKind.SHUFFLE).pipeline is DegradationKind.SHUFFLE
