"""
Moduł Danych - Obrazy, Checkpointy, Manifesty
=============================================
Obsługuje:
- Odczyt/zapis obrazów PNG (float32 [0, 1] ↔ 8 bitów)
- Binarny format checkpointu "DGDF" (wagi, EMA, momenty Adama)
- Manifesty zbiorów danych (JSON)
- Generowanie zabawkowego korpusu LQ z proceduralnych tekstur
- Zapis rekordu przebiegu (run.json)
"""

import hashlib
import json
import os
import struct
import subprocess
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from PIL import Image, UnidentifiedImageError

from lqsynth.core.denoiser import DenoiserModel, UNetConfig
from lqsynth.core.diffusion import DiffusionConfig
from lqsynth.core.errors import CheckpointError, DimensionError, ImageDecodeError
from lqsynth.core.optim import AdamState
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import Tensor, default_dtype
from lqsynth.modules.degradations import (
    Blur,
    DegradationKind,
    DegradationSample,
    GaussianNoise,
    Jpeg,
    Resize,
    apply,
    output_size,
)

CHECKPOINT_MAGIC = b"DGDF"
CHECKPOINT_VERSION = 1
IMAGE_SUFFIXES = (".png",)


# ==================== Obrazy ====================

def load_image(path: Path) -> np.ndarray:
    """Wczytaj obraz jako float32 (H, W, 3) w [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageDecodeError(f"Nie można zdekodować {path}: {e}") from e
    return data.astype(np.float32) / 255.0


def save_image(image: np.ndarray, path: Path) -> Path:
    """Zapisz obraz [0, 1] jako 8-bitowy PNG (zaokrąglenie połówek do parzystej)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.rint(np.clip(image.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.ndim == 3 and data.shape[-1] == 1:
        data = data[..., 0]
    Image.fromarray(data).save(path, format="PNG")
    return path


def list_images(directory: Path) -> List[Path]:
    """Posortowana lista plików PNG w katalogu (rekurencyjnie)."""
    directory = Path(directory)
    return sorted(p for p in directory.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)


def random_crop(image: np.ndarray, size: int, rng: Rng) -> np.ndarray:
    """Losowy wycinek size×size z jednostajnie wybranym lewym górnym rogiem."""
    h, w = image.shape[:2]
    if h < size or w < size:
        raise DimensionError(f"Obraz {h}x{w} mniejszy niż wycinek {size}")
    top = rng.integers(0, h - size)
    left = rng.integers(0, w - size)
    return image[top:top + size, left:left + size].copy()


# ==================== Checkpoint ====================

@dataclass
class Checkpoint:
    """Zawartość checkpointu."""
    model: DenoiserModel
    diffusion: DiffusionConfig
    step: int = 0
    adam: AdamState = field(default_factory=AdamState)


def _write_table(f: BinaryIO, tensors: Dict[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        f.write(struct.pack("<H", len(encoded)))
        f.write(encoded)
        f.write(struct.pack("<B", data.ndim))
        f.write(struct.pack(f"<{data.ndim}I", *data.shape))
        f.write(data.tobytes())


def _read_exact(f: BinaryIO, size: int) -> bytes:
    chunk = f.read(size)
    if len(chunk) != size:
        raise CheckpointError("Checkpoint obcięty")
    return chunk


def _read_table(f: BinaryIO) -> Dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(f, 1))
        dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim)) if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        payload = _read_exact(f, 4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(default_dtype())
    return tensors


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    """Zapisz checkpoint atomowo (plik tymczasowy + zmiana nazwy)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "diffusion": ckpt.diffusion.to_dict(),
        "unet": ckpt.model.config.to_dict(),
        "step": ckpt.step,
        "adam_step": ckpt.adam.step,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    fd, tmp_name = tempfile.mkstemp(prefix=".ckpt-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
            f.write(header_bytes)
            _write_table(f, {n: t.data for n, t in ckpt.model.parameters().items()})
            _write_table(f, {n: t.data for n, t in ckpt.model.ema_parameters().items()})
            _write_table(f, ckpt.adam.m)
            _write_table(f, ckpt.adam.v)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    logger.info(f"Checkpoint zapisany: {path} (krok {ckpt.step})")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Wczytaj checkpoint; zły nagłówek lub wersja → CheckpointError."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Brak pliku checkpointu: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: niepoprawny nagłówek {magic!r}")
        version, header_len = struct.unpack("<II", _read_exact(f, 8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: wersja formatu {version}, obsługiwana {CHECKPOINT_VERSION}"
            )
        try:
            header = json.loads(_read_exact(f, header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: uszkodzony nagłówek") from e
        live = _read_table(f)
        ema = _read_table(f)
        moments_m = _read_table(f)
        moments_v = _read_table(f)
        if f.read(1):
            raise CheckpointError(f"{path}: nadmiarowe dane na końcu pliku")

    config = UNetConfig.from_dict(header["unet"])
    try:
        model = DenoiserModel(
            config,
            {n: Tensor(d, requires_grad=True, name=n) for n, d in live.items()},
            ema={n: Tensor(d, name=n) for n, d in ema.items()},
        )
    except DimensionError as e:
        raise CheckpointError(f"{path}: wagi niezgodne z konfiguracją: {e}") from e

    return Checkpoint(
        model=model,
        diffusion=DiffusionConfig.from_dict(header["diffusion"]),
        step=int(header.get("step", 0)),
        adam=AdamState(step=int(header.get("adam_step", 0)), m=moments_m, v=moments_v),
    )


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ==================== Manifest zbioru ====================

@dataclass
class ManifestEntry:
    """Pozycja manifestu (ścieżka względem katalogu głównego)."""
    path: str
    width: int
    height: int
    split: str = "train"
    source: Optional[str] = None
    degradation: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {"path": self.path, "width": self.width, "height": self.height, "split": self.split}
        if self.source is not None:
            data["source"] = self.source
        if self.degradation is not None:
            data["degradation"] = self.degradation
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestEntry":
        return cls(
            path=data["path"],
            width=int(data["width"]),
            height=int(data["height"]),
            split=data.get("split", "train"),
            source=data.get("source"),
            degradation=data.get("degradation"),
        )


@dataclass
class DatasetManifest:
    """Indeks zbioru obrazów."""
    root: Path
    entries: List[ManifestEntry]
    seed: int
    profile: str = "none"

    def paths(self, split: Optional[str] = None) -> List[Path]:
        return [self.root / e.path for e in self.entries if split is None or e.split == split]

    def load_images(self, split: Optional[str] = None) -> List[np.ndarray]:
        return [load_image(p) for p in self.paths(split)]

    def validate(self) -> None:
        """Sprawdź brak duplikatów i obecność plików."""
        seen = set()
        for entry in self.entries:
            if entry.path in seen:
                raise ValueError(f"Zduplikowana ścieżka w manifeście: {entry.path}")
            seen.add(entry.path)
            if not (self.root / entry.path).exists():
                raise FileNotFoundError(f"Brak pliku z manifestu: {entry.path}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "profile": self.profile,
            "entries": [e.to_dict() for e in self.entries],
        }

    def save(self, path: Optional[Path] = None) -> Path:
        path = Path(path) if path else self.root / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            root=path.parent,
            entries=[ManifestEntry.from_dict(e) for e in data.get("entries", [])],
            seed=int(data.get("seed", 0)),
            profile=data.get("profile", "none"),
        )

    @classmethod
    def from_directory(cls, directory: Path, seed: int = 0) -> "DatasetManifest":
        """Manifest ze wszystkich PNG w katalogu."""
        directory = Path(directory)
        entries = []
        for p in list_images(directory):
            with Image.open(p) as img:
                width, height = img.size
            entries.append(ManifestEntry(p.relative_to(directory).as_posix(), width, height))
        return cls(root=directory, entries=entries, seed=seed)


# ==================== Korpus zabawkowy ====================

def procedural_texture(rng: Rng, size: int) -> np.ndarray:
    """
    Proceduralny obraz RGB [0, 1]: gradient tła, kratki sinusoidalne
    i rozmyte plamy o losowych kolorach.
    """
    gen = rng.generator()
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size

    base = gen.uniform(0.2, 0.8, size=3)
    slope = gen.uniform(-0.3, 0.3, size=(2, 3))
    image = base + xx[..., None] * slope[0] + yy[..., None] * slope[1]

    for _ in range(int(gen.integers(1, 4))):
        angle = gen.uniform(0, np.pi)
        freq = gen.uniform(2.0, 10.0)
        phase = gen.uniform(0, 2 * np.pi)
        amp = gen.uniform(0.05, 0.25, size=3)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
        image += wave[..., None] * amp

    for _ in range(int(gen.integers(2, 7))):
        cy, cx = gen.uniform(0, 1, size=2)
        radius = gen.uniform(0.05, 0.25)
        color = gen.uniform(-0.4, 0.4, size=3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
        image += blob[..., None] * color

    return np.clip(image, 0.0, 1.0).astype(np.float32)


def make_clean_set(count: int, size: int, rng: Rng) -> List[np.ndarray]:
    """Zbiór czystych tekstur; obraz i korzysta ze strumienia rng.child(i)."""
    return [procedural_texture(rng.child(i), size) for i in range(count)]


def heavy_degradation(
    rng: Rng,
    input_size: Tuple[int, int],
    output: Tuple[int, int],
    toy_settings,
) -> DegradationSample:
    """
    Odrębna rodzina degradacji korpusu: silne rozmycie, pomniejszenie,
    powrót do rozdzielczości LQ, silny szum i niska jakość JPEG.
    """
    blur_sigma = rng.uniform(*toy_settings.heavy_blur_sigma)
    factor = rng.uniform(*toy_settings.heavy_downscale)
    small = output_size(input_size, 1.0 / factor)
    stages = [
        Blur(blur_sigma, blur_sigma, 0.0, 2 * int(np.ceil(3 * blur_sigma)) + 1),
        Resize(1.0 / factor, "bicubic", small),
        Resize(output[0] / small[0], "bilinear", tuple(output)),
        GaussianNoise(rng.uniform(*toy_settings.heavy_noise_sigma), rng.bernoulli(0.5)),
        Jpeg(rng.integers(*toy_settings.heavy_jpeg_quality)),
    ]
    seed = rng.integers(0, (1 << 62) - 1)
    return DegradationSample(
        DegradationKind.CLASSICAL, stages, seed, tuple(input_size), tuple(output)
    )


def make_toy_did(
    out_dir: Path,
    toy_settings,
    seed: int = 0,
    severity_profile: Optional[str] = None,
    clean_set: Optional[Sequence[np.ndarray]] = None,
    target_scale: float = 0.5,
    val_fraction: float = 0.1,
) -> DatasetManifest:
    """
    Zbuduj korpus "prawdziwych" obrazów LQ.

    Profil "heavy" stosuje rodzinę degradacji rozłączną z potokami syntezy
    (szum i jakość JPEG spoza ich zakresów); "none" kopiuje czyste obrazy.
    Źródła zapisywane są w `sources/`, korpus w `corpus/`.
    """
    out_dir = Path(out_dir)
    profile = severity_profile or toy_settings.severity_profile
    if profile not in ("none", "heavy"):
        raise ValueError(f"Nieznany profil degradacji korpusu: {profile}")
    master = Rng(seed)
    if clean_set is None:
        clean_set = make_clean_set(
            toy_settings.corpus_size, toy_settings.image_size, master.child("clean")
        )

    val_count = int(round(len(clean_set) * val_fraction))
    entries: List[ManifestEntry] = []
    for index, clean in enumerate(clean_set):
        name = f"{index:05d}.png"
        save_image(clean, out_dir / "sources" / name)
        if profile == "none":
            lq, degradation = clean, None
        else:
            size = clean.shape[:2]
            sample = heavy_degradation(
                master.child("degradation").child(index),
                size,
                output_size(size, target_scale),
                toy_settings,
            )
            lq = apply(clean, sample)
            degradation = sample.to_dict()
        save_image(lq, out_dir / "corpus" / name)
        entries.append(
            ManifestEntry(
                path=f"corpus/{name}",
                width=int(lq.shape[1]),
                height=int(lq.shape[0]),
                split="val" if index >= len(clean_set) - val_count else "train",
                source=f"sources/{name}",
                degradation=degradation,
            )
        )

    manifest = DatasetManifest(root=out_dir, entries=entries, seed=seed, profile=profile)
    manifest.save()
    logger.info(f"Korpus zabawkowy: {len(entries)} obrazów, profil {profile} → {out_dir}")
    return manifest


def make_hq_set(out_dir: Path, count: int, size: int, seed: int) -> DatasetManifest:
    """Zbiór HQ do syntezy par (strumień losowy rozłączny z korpusem)."""
    out_dir = Path(out_dir)
    images = make_clean_set(count, size, Rng(seed).child("hq"))
    entries = []
    for index, image in enumerate(images):
        name = f"{index:05d}.png"
        save_image(image, out_dir / name)
        entries.append(ManifestEntry(name, size, size, split="hq"))
    manifest = DatasetManifest(root=out_dir, entries=entries, seed=seed, profile="clean")
    manifest.save()
    return manifest


# ==================== Rekord przebiegu ====================

def version_string() -> str:
    """Wersja z `git describe --always --dirty`, w razie braku gita wersja pakietu."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from lqsynth import __version__
    return __version__


def write_run_record(
    run_dir: Path,
    command: str,
    config: Dict[str, Any],
    seeds: Dict[str, Any],
    checkpoint: Optional[Path] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Zapisz run.json wystarczający do odtworzenia przebiegu."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    record: Dict[str, Any] = {
        "command": command,
        "version": version_string(),
        "timestamp": datetime.now().isoformat(),
        "seeds": seeds,
        "config": config,
    }
    if checkpoint is not None and Path(checkpoint).exists():
        record["checkpoint"] = {"path": str(checkpoint), "sha256": file_sha256(checkpoint)}
    if extra:
        record.update(extra)
    path = run_dir / "run.json"
    path.write_text(json.dumps(record, indent=2, default=str), encoding="utf-8")
    return path
