"""
Moduł Syntezy Par - HQ → LQ
===========================
Obsługuje:
- x = d(y), skok do x_t, odwrotne odszumianie do r
- Strażnika struktury (PSNR względem HQ przeskalowanego do rozdzielczości LQ)
- Ponowienia z połowieniem t i odrzucanie par
- Wsadową syntezę asynchroniczną z manifestem par
- Arkusz porównawczy dla rosnącego t oraz próbkowanie bezwarunkowe
"""

import asyncio
import json
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from PIL import Image, ImageDraw

from lqsynth.core.diffusion import (
    NoisePredictor,
    NoiseSchedule,
    diffuse_from_initial_lq,
    reverse_chain,
)
from lqsynth.core.errors import ConfigError, LqSynthError
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import Tensor, default_dtype
from lqsynth.modules.degradations import (
    DegradationKind,
    DegradationRanges,
    DegradationSample,
    apply,
    resize_to,
    sample_pipeline,
)
from lqsynth.modules.metrics import psnr


# ==================== Konfiguracja ====================

@dataclass
class SynthesisConfig:
    """Parametry syntezy par."""
    pipeline: DegradationKind = DegradationKind.HIGH_ORDER
    t_min: int = 0
    t_max: int = 500
    guard_db: float = 24.0
    guard_enabled: bool = True
    max_retries: int = 3
    deterministic_reverse: bool = False
    ranges: DegradationRanges = field(default_factory=DegradationRanges)

    def __post_init__(self):
        self.pipeline = DegradationKind(self.pipeline)

    def validate(self, total_steps: int) -> None:
        if not 0 <= self.t_min <= self.t_max <= total_steps:
            raise ConfigError(
                f"Wymagane 0 ≤ t_min ≤ t_max ≤ {total_steps}, jest {self.t_min}, {self.t_max}"
            )
        if self.guard_db < 0:
            raise ConfigError(f"Próg strażnika musi być nieujemny, jest {self.guard_db}")
        if self.max_retries < 0:
            raise ConfigError("max_retries musi być nieujemne")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pipeline": self.pipeline.value,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "guard_db": self.guard_db,
            "guard_enabled": self.guard_enabled,
            "max_retries": self.max_retries,
            "deterministic_reverse": self.deterministic_reverse,
        }

    @classmethod
    def from_settings(cls, settings, diffusion_config) -> "SynthesisConfig":
        """Konfiguracja z ustawień; jawne t_max ma pierwszeństwo przed profilem."""
        synth = settings.synthesis
        t_max = synth.t_max
        if t_max is None:
            t_max = diffusion_config.t_max_for(synth.profile)
        return cls(
            pipeline=DegradationKind(synth.pipeline),
            t_min=synth.t_min,
            t_max=t_max,
            guard_db=synth.guard_db,
            guard_enabled=synth.guard_enabled,
            max_retries=synth.max_retries,
            deterministic_reverse=synth.deterministic_reverse,
            ranges=DegradationRanges.from_settings(settings.degradation),
        )


# ==================== Zakres modelu ====================

def to_model_range(image: np.ndarray) -> Tensor:
    """(H, W, C) w [0, 1] → (1, C, H, W) w [−1, 1]."""
    return Tensor((2.0 * image.transpose(2, 0, 1)[None] - 1.0).astype(default_dtype()))


def from_model_range(tensor: Tensor) -> np.ndarray:
    """(1, C, H, W) w [−1, 1] → (H, W, C) w [0, 1]."""
    data = tensor.data[0].transpose(1, 2, 0)
    return np.clip((data.astype(np.float64) + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)


# ==================== Strażnik struktury ====================

@dataclass
class GuardResult:
    passed: bool
    measured_db: float


def structure_guard(hq: np.ndarray, lq: np.ndarray, guard_db: float) -> GuardResult:
    """PSNR między LQ a HQ przeskalowanym (bicubic) do rozdzielczości LQ."""
    reference = resize_to(hq, lq.shape[:2], "bicubic")
    measured = psnr(np.clip(reference, 0.0, 1.0), lq)
    return GuardResult(passed=measured >= guard_db, measured_db=measured)


# ==================== Synteza pojedynczej pary ====================

@dataclass
class PairMeta:
    """Pochodzenie pary: wystarcza do odtworzenia LQ w trybie deterministycznym."""
    t_initial: int
    t_used: int
    degradation: DegradationSample
    rng: Dict[str, int]
    attempt: int = 0
    guard_psnr_db: Optional[float] = None
    accepted: bool = True
    reason: Optional[str] = None
    deterministic_reverse: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t_initial": self.t_initial,
            "t_used": self.t_used,
            "attempt": self.attempt,
            "retries": self.attempt,
            "guard_psnr_db": self.guard_psnr_db,
            "accepted": self.accepted,
            "reason": self.reason,
            "rng": self.rng,
            "deterministic_reverse": self.deterministic_reverse,
            "degradation": self.degradation.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PairMeta":
        return cls(
            t_initial=int(data["t_initial"]),
            t_used=int(data["t_used"]),
            degradation=DegradationSample.from_dict(data["degradation"]),
            rng=dict(data["rng"]),
            attempt=int(data.get("attempt", 0)),
            guard_psnr_db=data.get("guard_psnr_db"),
            accepted=bool(data.get("accepted", True)),
            reason=data.get("reason"),
            deterministic_reverse=bool(data.get("deterministic_reverse", False)),
        )


@dataclass
class TrainingPair:
    hq: np.ndarray
    lq: Optional[np.ndarray]
    meta: PairMeta


def _attempt_rng(rng: Rng, attempt: int) -> Rng:
    return rng.child(f"attempt-{attempt}")


def synthesize_at(
    hq: np.ndarray,
    sample: DegradationSample,
    t: int,
    model: NoisePredictor,
    sched: NoiseSchedule,
    rng: Rng,
    deterministic: bool = False,
) -> np.ndarray:
    """LQ dla ustalonej degradacji i kroku t; t = 0 zwraca d(y)."""
    x = apply(hq, sample)
    if t == 0:
        return x
    z, _ = diffuse_from_initial_lq(to_model_range(x), t, rng.child("diffuse"), sched)
    r = reverse_chain(z, t, model, rng.child("reverse"), sched, deterministic=deterministic)
    return from_model_range(r)


def synthesize_lq(
    hq: np.ndarray,
    model: NoisePredictor,
    sched: NoiseSchedule,
    cfg: SynthesisConfig,
    rng: Rng,
) -> Tuple[Optional[np.ndarray], PairMeta]:
    """
    Wygeneruj LQ dla obrazu HQ.

    Gdy strażnik odrzuci wynik, t jest połowione (najwyżej max_retries razy);
    po wyczerpaniu prób para jest odrzucana (lq = None, meta.reason).
    """
    cfg.validate(sched.total_steps)
    sample = sample_pipeline(cfg.pipeline, rng.child("degradation"), cfg.ranges, hq.shape[:2])
    t_initial = rng.child("t").integers(cfg.t_min, cfg.t_max)
    meta = PairMeta(
        t_initial=t_initial,
        t_used=t_initial,
        degradation=sample,
        rng=rng.state(),
        deterministic_reverse=cfg.deterministic_reverse,
    )

    t = t_initial
    for attempt in range(cfg.max_retries + 1):
        lq = synthesize_at(
            hq, sample, t, model, sched, _attempt_rng(rng, attempt), cfg.deterministic_reverse
        )
        guard = structure_guard(hq, lq, cfg.guard_db)
        meta.t_used = t
        meta.attempt = attempt
        meta.guard_psnr_db = guard.measured_db
        if not cfg.guard_enabled or guard.passed:
            return lq, meta
        logger.debug(f"Strażnik odrzucił t={t}: {guard.measured_db:.2f} dB < {cfg.guard_db} dB")
        if t == 0:
            break
        t //= 2

    meta.accepted = False
    meta.reason = (
        f"PSNR {meta.guard_psnr_db:.2f} dB < {cfg.guard_db} dB po {meta.attempt + 1} próbach"
    )
    return None, meta


def resynthesize(
    hq: np.ndarray,
    meta: PairMeta,
    model: NoisePredictor,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Odtwórz LQ z rekordu pochodzenia (bit w bit przy tym samym modelu)."""
    rng = Rng.from_state(meta.rng)
    return synthesize_at(
        hq,
        meta.degradation,
        meta.t_used,
        model,
        sched,
        _attempt_rng(rng, meta.attempt),
        meta.deterministic_reverse,
    )


# ==================== Synteza wsadowa ====================

@dataclass
class PairRecord:
    """Rekord manifestu par (para zaakceptowana lub odrzucenie)."""
    index: int
    hq_path: Optional[str]
    lq_path: Optional[str]
    accepted: bool
    reason: Optional[str] = None
    meta: Optional[PairMeta] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "hq_path": self.hq_path,
            "lq_path": self.lq_path,
            "accepted": self.accepted,
            "reason": self.reason,
            "meta": self.meta.to_dict() if self.meta else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PairRecord":
        meta = data.get("meta")
        return cls(
            index=int(data["index"]),
            hq_path=data.get("hq_path"),
            lq_path=data.get("lq_path"),
            accepted=bool(data["accepted"]),
            reason=data.get("reason"),
            meta=PairMeta.from_dict(meta) if meta else None,
        )


@dataclass
class PairManifest:
    """Nagłówek przebiegu i rekordy wszystkich par."""
    header: Dict[str, Any]
    records: List[PairRecord] = field(default_factory=list)

    @property
    def accepted(self) -> List[PairRecord]:
        return [r for r in self.records if r.accepted]

    @property
    def acceptance_rate(self) -> float:
        return len(self.accepted) / len(self.records) if self.records else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"header": self.header, "pairs": [r.to_dict() for r in self.records]}

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "PairManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            header=data.get("header", {}),
            records=[PairRecord.from_dict(r) for r in data.get("pairs", [])],
        )


HqItem = Union[Path, np.ndarray]


def _synthesize_item(
    index: int,
    item: HqItem,
    model: NoisePredictor,
    sched: NoiseSchedule,
    cfg: SynthesisConfig,
    master_seed: int,
    out_dir: Optional[Path],
) -> PairRecord:
    from lqsynth.modules.data_io import load_image, save_image

    hq_path = str(item) if isinstance(item, Path) else None
    try:
        hq = load_image(item) if isinstance(item, Path) else item
        rng = Rng(master_seed).child(index)
        lq, meta = synthesize_lq(hq, model, sched, cfg, rng)
        lq_path = None
        if lq is not None and out_dir is not None:
            name = Path(hq_path).name if hq_path else f"{index:05d}.png"
            lq_path = str(save_image(lq, Path(out_dir) / "lq" / name))
        return PairRecord(index, hq_path, lq_path, meta.accepted, meta.reason, meta)
    except (LqSynthError, OSError) as e:
        logger.error(f"Synteza obrazu {index} nieudana: {e}")
        return PairRecord(index, hq_path, None, False, f"{type(e).__name__}: {e}")


async def batch_synthesize(
    hq_dataset: Sequence[HqItem],
    model: NoisePredictor,
    sched: NoiseSchedule,
    cfg: SynthesisConfig,
    master_seed: int = 0,
    parallelism: int = 1,
    out_dir: Optional[Path] = None,
    header: Optional[Dict[str, Any]] = None,
) -> PairManifest:
    """
    Zsyntetyzuj parę dla każdego obrazu HQ.

    Obraz i korzysta ze strumienia Rng(master_seed).child(i), więc wynik nie
    zależy od równoległości. Błędy pojedynczych obrazów trafiają do manifestu.
    """
    if len(hq_dataset) == 0:
        raise ConfigError("Pusty zbiór HQ")
    cfg.validate(sched.total_steps)

    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(max(1, parallelism))

    async def _run(index: int, item: HqItem) -> PairRecord:
        async with semaphore:
            return await loop.run_in_executor(
                None,
                partial(_synthesize_item, index, item, model, sched, cfg, master_seed, out_dir),
            )

    records = await asyncio.gather(*(_run(i, item) for i, item in enumerate(hq_dataset)))

    manifest_header = {
        "seed": master_seed,
        "config": cfg.to_dict(),
        "schedule": sched.config.to_dict(),
    }
    manifest_header.update(header or {})
    manifest = PairManifest(header=manifest_header, records=sorted(records, key=lambda r: r.index))
    logger.info(
        f"Synteza zakończona: {len(manifest.accepted)}/{len(manifest.records)} par zaakceptowanych"
    )
    return manifest


# ==================== Arkusz t i próbkowanie ====================

def t_sweep(
    hq: np.ndarray,
    model: NoisePredictor,
    sched: NoiseSchedule,
    cfg: SynthesisConfig,
    rng: Rng,
    t_values: Sequence[int] = (250, 500, 750),
) -> List[Tuple[str, np.ndarray]]:
    """HQ, początkowe LQ i LQ po dyfuzji dla kolejnych t (ta sama degradacja)."""
    sched.check_step(list(t_values), allow_zero=True)
    sample = sample_pipeline(cfg.pipeline, rng.child("degradation"), cfg.ranges, hq.shape[:2])
    panels = [("HQ", hq), ("d(y)", apply(hq, sample))]
    for t in t_values:
        lq = synthesize_at(
            hq, sample, int(t), model, sched, rng.child(f"t{t}"), cfg.deterministic_reverse
        )
        panels.append((f"t={t}", lq))
    return panels


def contact_sheet(panels: Sequence[Tuple[str, np.ndarray]], path: Path, scale: int = 2) -> Path:
    """Zapisz panele obok siebie z podpisami (PNG)."""
    cell_h = max(p[1].shape[0] for p in panels) * scale
    cell_w = max(p[1].shape[1] for p in panels) * scale
    label_h = 14
    sheet = Image.new("RGB", (cell_w * len(panels), cell_h + label_h), "white")
    draw = ImageDraw.Draw(sheet)
    for i, (label, image) in enumerate(panels):
        data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
        tile = Image.fromarray(data).resize((cell_w, cell_h), Image.NEAREST)
        sheet.paste(tile, (i * cell_w, label_h))
        draw.text((i * cell_w + 2, 1), label, fill="black")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sheet.save(path, format="PNG")
    return path


def sample_unconditional(
    model: NoisePredictor,
    sched: NoiseSchedule,
    count: int,
    size: int,
    rng: Rng,
    channels: int = 3,
    deterministic: bool = False,
) -> List[np.ndarray]:
    """Próbki z czystego szumu: pełny łańcuch odwrotny od t = T."""
    images = []
    for index in range(count):
        stream = rng.child(index)
        x_T = Tensor(stream.child("init").normal((1, channels, size, size), dtype=default_dtype()))
        x_0 = reverse_chain(
            x_T, sched.total_steps, model, stream.child("reverse"), sched, deterministic
        )
        images.append(from_model_range(x_0))
    return images
