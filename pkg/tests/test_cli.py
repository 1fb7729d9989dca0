"""Testy interfejsu wiersza poleceń."""

import json

import pytest
from typer.testing import CliRunner

from lqsynth.cli import app
from lqsynth.config.settings import TensorSettings
from lqsynth.core.tensor import configure_engine

runner = CliRunner()

TINY_ENV = """\
LQSYNTH_DENOISER__BASE_CHANNELS=8
LQSYNTH_DENOISER__CHANNEL_MULTS=[1,2]
LQSYNTH_DENOISER__RES_BLOCKS_PER_LEVEL=1
LQSYNTH_DENOISER__TIME_EMBED_DIM=32
LQSYNTH_DENOISER__NORM_GROUPS=4
LQSYNTH_TOY_CORPUS__IMAGE_SIZE=32
"""


def _invoke(env_file, *args):
    return runner.invoke(app, ["--config", str(env_file), *args])


@pytest.fixture
def env_file(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "tiny.env"
    path.write_text(TINY_ENV, encoding="utf-8")
    return path


@pytest.fixture
def toy_run(tmp_path, env_file):
    """Korpus, zbiór HQ i checkpoint po zerowym treningu."""
    toy = tmp_path / "toy"
    result = _invoke(env_file, "make-toy-did", "--out", str(toy), "--count", "4", "--hq-count", "2")
    assert result.exit_code == 0, result.output
    run = tmp_path / "train"
    result = _invoke(
        env_file,
        "train", "--data", str(toy), "--out", str(run),
        "--iters", "0", "--t-total", "50", "--patch", "8",
    )
    assert result.exit_code == 0, result.output
    return {"toy": toy, "hq": toy / "hq", "checkpoint": run / "checkpoints" / "final.dgdf"}


class TestCorpusAndTraining:
    """Korpus zabawkowy i trening."""

    def test_make_toy_did(self, tmp_path, env_file):
        out = tmp_path / "did"
        result = _invoke(env_file, "make-toy-did", "--out", str(out), "--count", "3", "--seed", "5")
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert len(manifest["entries"]) == 3
        record = json.loads((out / "run.json").read_text(encoding="utf-8"))
        assert record["command"] == "make-toy-did"
        assert record["seeds"] == {"master": 5}

    def test_unknown_profile(self, tmp_path, env_file):
        result = _invoke(env_file, "make-toy-did", "--out", str(tmp_path / "x"), "--profile", "medium")
        assert result.exit_code == 1

    def test_train_zero_iterations(self, toy_run):
        assert toy_run["checkpoint"].exists()
        record = json.loads((toy_run["checkpoint"].parents[1] / "run.json").read_text(encoding="utf-8"))
        assert record["diffusion"]["total_steps"] == 50
        assert record["unet"]["base_channels"] == 8
        assert record["final_step"] == 0

    def test_train_missing_corpus(self, tmp_path, env_file):
        result = _invoke(env_file, "train", "--data", str(tmp_path / "none"), "--iters", "0")
        assert result.exit_code == 1


class TestDegradeAndSynth:
    """Degradacje ręczne i synteza par."""

    def test_degrade_deterministic(self, tmp_path, env_file, toy_run):
        for name in ("a", "b"):
            result = _invoke(
                env_file,
                "degrade", "--input", str(toy_run["hq"]), "--out", str(tmp_path / name),
                "--kind", "bicubic", "--scale", "4", "--seed", "3",
            )
            assert result.exit_code == 0, result.output
        a = sorted((tmp_path / "a" / "lq").glob("*.png"))
        b = sorted((tmp_path / "b" / "lq").glob("*.png"))
        assert len(a) == 2
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
        records = json.loads((tmp_path / "a" / "degradations.json").read_text(encoding="utf-8"))
        assert records[0]["degradation"]["kind"] == "bicubic"

    def test_degrade_unknown_kind(self, tmp_path, env_file, toy_run):
        result = _invoke(
            env_file, "degrade", "--input", str(toy_run["hq"]), "--out", str(tmp_path / "x"),
            "--kind", "blurry",
        )
        assert result.exit_code == 1

    def test_synth_and_replay(self, tmp_path, env_file, toy_run):
        out = tmp_path / "synth"
        result = _invoke(
            env_file,
            "synth", "--hq", str(toy_run["hq"]), "--checkpoint", str(toy_run["checkpoint"]),
            "--out", str(out), "--t-min", "1", "--t-max", "3", "--no-guard", "--seed", "11",
        )
        assert result.exit_code == 0, result.output
        pairs = json.loads((out / "pairs.json").read_text(encoding="utf-8"))
        assert len(pairs["pairs"]) == 2

        replay = tmp_path / "replay"
        result = _invoke(
            env_file,
            "synth", "--checkpoint", str(toy_run["checkpoint"]), "--out", str(replay),
            "--from-manifest", str(out / "pairs.json"),
        )
        assert result.exit_code == 0, result.output
        original = sorted((out / "lq").glob("*.png"))
        replayed = sorted((replay / "lq").glob("*.png"))
        assert [p.name for p in original] == [p.name for p in replayed]
        assert [p.read_bytes() for p in original] == [p.read_bytes() for p in replayed]

    def test_degrade_default_out_under_runs_dir(self, tmp_path, env_file, toy_run):
        runs = tmp_path / "my_runs"
        env_file.write_text(TINY_ENV + f"LQSYNTH_RUNS_DIR={runs}\n", encoding="utf-8")
        result = _invoke(env_file, "degrade", "--input", str(toy_run["hq"]), "--kind", "bicubic")
        assert result.exit_code == 0, result.output
        assert len(list((runs / "degrade" / "lq").glob("*.png"))) == 2
        assert (runs / "degrade" / "run.json").exists()

    def test_make_toy_did_default_out_under_data_dir(self, tmp_path, env_file):
        data = tmp_path / "my_data"
        env_file.write_text(TINY_ENV + f"LQSYNTH_DATA_DIR={data}\n", encoding="utf-8")
        result = _invoke(env_file, "make-toy-did", "--count", "2", "--hq-count", "1")
        assert result.exit_code == 0, result.output
        assert (data / "toy" / "manifest.json").exists()

    def test_float64_engine_from_config(self, tmp_path, env_file, toy_run):
        env_file.write_text(
            TINY_ENV + "LQSYNTH_TENSOR__DTYPE=float64\nLQSYNTH_TENSOR__DETERMINISTIC=true\n",
            encoding="utf-8",
        )
        try:
            result = _invoke(
                env_file,
                "synth", "--hq", str(toy_run["hq"]), "--checkpoint", str(toy_run["checkpoint"]),
                "--out", str(tmp_path / "s64"), "--t-min", "1", "--t-max", "2", "--no-guard",
            )
            assert result.exit_code == 0, result.output
            assert len(list((tmp_path / "s64" / "lq").glob("*.png"))) == 2
        finally:
            configure_engine(TensorSettings())

    def test_unsupported_dtype_in_config(self, env_file):
        env_file.write_text(TINY_ENV + "LQSYNTH_TENSOR__DTYPE=float16\n", encoding="utf-8")
        result = _invoke(env_file, "version")
        assert result.exit_code == 1

    def test_synth_requires_hq(self, tmp_path, env_file, toy_run):
        result = _invoke(
            env_file, "synth", "--checkpoint", str(toy_run["checkpoint"]), "--out", str(tmp_path / "s")
        )
        assert result.exit_code == 1

    def test_synth_missing_checkpoint(self, tmp_path, env_file, toy_run):
        result = _invoke(
            env_file, "synth", "--hq", str(toy_run["hq"]), "--checkpoint", str(tmp_path / "none.dgdf")
        )
        assert result.exit_code == 1


class TestGeneral:
    def test_version(self, env_file):
        result = _invoke(env_file, "version")
        assert result.exit_code == 0
        assert "LQ Synth" in result.output

    def test_unknown_flag(self, env_file):
        result = _invoke(env_file, "degrade", "--no-such-flag")
        assert result.exit_code != 0

    def test_missing_config_file(self, tmp_path):
        result = runner.invoke(app, ["--config", str(tmp_path / "missing.env"), "version"])
        assert result.exit_code == 1
