"""
Moduł Treningu - DDPM na korpusie LQ
====================================
Obsługuje:
- Losowanie wsadów wycinków z obrazów korpusu
- Pętlę treningową (Adam + EMA) z wygładzoną stratą
- Dziennik straty loss.csv
- Okresowe i końcowe checkpointy oraz wznawianie
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger

from lqsynth.core.denoiser import DenoiserModel
from lqsynth.core.diffusion import DiffusionConfig, NoiseSchedule, train_step
from lqsynth.core.errors import ConfigError
from lqsynth.core.optim import Adam, AdamState
from lqsynth.core.rng import Rng
from lqsynth.core.tensor import Tensor, default_dtype
from lqsynth.modules.data_io import Checkpoint, random_crop, save_checkpoint

LOSS_COLUMNS = ("step", "loss", "smoothed")


@dataclass
class TrainerConfig:
    """Parametry pętli treningowej."""
    batch_size: int = 16
    learning_rate: float = 8e-5
    ema_decay: float = 0.995
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    patch_size: int = 32
    log_every: int = 50
    checkpoint_every: int = 1000
    loss_smoothing: float = 0.98
    seed: int = 0

    @classmethod
    def from_settings(cls, settings) -> "TrainerConfig":
        training = settings.training
        return cls(
            batch_size=training.batch_size,
            learning_rate=training.learning_rate,
            ema_decay=training.ema_decay,
            betas=(training.adam_beta1, training.adam_beta2),
            eps=training.adam_eps,
            patch_size=training.patch_size,
            log_every=training.log_every,
            checkpoint_every=training.checkpoint_every,
            loss_smoothing=training.loss_smoothing,
            seed=training.seed,
        )

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "ema_decay": self.ema_decay,
            "betas": list(self.betas),
            "eps": self.eps,
            "patch_size": self.patch_size,
            "log_every": self.log_every,
            "checkpoint_every": self.checkpoint_every,
            "loss_smoothing": self.loss_smoothing,
            "seed": self.seed,
        }


@dataclass
class TrainingSummary:
    """Wynik przebiegu treningowego."""
    start_step: int
    final_step: int
    last_loss: Optional[float] = None
    smoothed_loss: Optional[float] = None
    checkpoints: List[Path] = field(default_factory=list)


# ==================== Wsady ====================

def sample_batch(
    images: Sequence[np.ndarray],
    batch_size: int,
    patch_size: int,
    rng: Rng,
) -> Tensor:
    """Wsad (N, C, P, P) w [−1, 1] z losowych wycinków losowych obrazów."""
    crops = []
    for i in range(batch_size):
        item_rng = rng.child(i)
        image = images[item_rng.integers(0, len(images) - 1)]
        crops.append(random_crop(image, patch_size, item_rng))
    batch = np.stack(crops).transpose(0, 3, 1, 2)
    return Tensor((2.0 * batch - 1.0).astype(default_dtype()))


# ==================== Trener ====================

class Trainer:
    """
    Trening denoisera na wycinkach korpusu.

    Losowość kroku n pochodzi wyłącznie ze strumienia Rng(seed).child("step").child(n),
    więc przebieg wznowiony z checkpointu kontynuuje tę samą trajektorię.
    """

    def __init__(
        self,
        model: DenoiserModel,
        sched: NoiseSchedule,
        images: Sequence[np.ndarray],
        config: TrainerConfig,
        run_dir: Path,
        adam_state: Optional[AdamState] = None,
        start_step: int = 0,
    ):
        if not images:
            raise ConfigError("Brak obrazów treningowych")
        too_small = [im.shape[:2] for im in images if min(im.shape[:2]) < config.patch_size]
        if too_small:
            raise ConfigError(
                f"{len(too_small)} obrazów mniejszych niż wycinek {config.patch_size} "
                f"(np. {too_small[0]})"
            )
        if model.frozen:
            raise ConfigError("Model zamrożony (kopia EMA) nie może być trenowany")
        model.config.check_input(
            (config.batch_size, model.config.in_channels, config.patch_size, config.patch_size)
        )

        self.model = model
        self.sched = sched
        self.images = list(images)
        self.config = config
        self.run_dir = Path(run_dir)
        self.step = start_step
        self.optim = Adam(
            model.parameters(),
            lr=config.learning_rate,
            betas=config.betas,
            eps=config.eps,
            state=adam_state,
        )
        self._smoothed: Optional[float] = None
        self._master = Rng(config.seed).child("step")
        logger.info(
            f"Trener zainicjalizowany ({len(self.images)} obrazów, krok startowy {start_step})"
        )

    @property
    def loss_path(self) -> Path:
        return self.run_dir / "loss.csv"

    @property
    def checkpoint_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    def _open_loss_log(self):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        fresh = not self.loss_path.exists() or self.step == 0
        f = open(self.loss_path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.writer(f)
        if fresh:
            writer.writerow(LOSS_COLUMNS)
        return f, writer

    def checkpoint(self, diffusion: DiffusionConfig, name: Optional[str] = None) -> Path:
        """Zapisz bieżący stan (wagi, EMA, momenty Adama)."""
        path = self.checkpoint_dir / (name or f"step_{self.step:07d}.dgdf")
        return save_checkpoint(
            path,
            Checkpoint(model=self.model, diffusion=diffusion, step=self.step, adam=self.optim.state),
        )

    def train_one(self) -> float:
        """Jeden krok treningu; zwraca stratę."""
        step_rng = self._master.child(self.step)
        batch = sample_batch(
            self.images, self.config.batch_size, self.config.patch_size, step_rng.child("batch")
        )
        loss = train_step(
            self.model,
            batch,
            step_rng.child("loss"),
            self.sched,
            self.optim,
            ema_decay=self.config.ema_decay,
            step=self.step,
        )
        self.step += 1
        if self._smoothed is None:
            self._smoothed = loss
        else:
            beta = self.config.loss_smoothing
            self._smoothed = beta * self._smoothed + (1.0 - beta) * loss
        return loss

    def run(
        self,
        iterations: int,
        on_step: Optional[Callable[[int, float], None]] = None,
    ) -> TrainingSummary:
        """
        Wykonaj `iterations` kroków.

        Strata trafia do loss.csv co log_every kroków, checkpoint co
        checkpoint_every kroków i zawsze na końcu (także przy iterations = 0).
        """
        diffusion = self.sched.config
        summary = TrainingSummary(start_step=self.step, final_step=self.step)
        target = self.step + iterations
        f, writer = self._open_loss_log()
        try:
            while self.step < target:
                loss = self.train_one()
                summary.last_loss = loss
                if self.step % self.config.log_every == 0 or self.step == target:
                    writer.writerow([self.step, f"{loss:.6f}", f"{self._smoothed:.6f}"])
                    f.flush()
                    logger.debug(
                        f"Krok {self.step}: strata {loss:.4f} (wygładzona {self._smoothed:.4f})"
                    )
                if self.step % self.config.checkpoint_every == 0 and self.step < target:
                    summary.checkpoints.append(self.checkpoint(diffusion))
                if on_step is not None:
                    on_step(self.step, loss)
        finally:
            f.close()

        summary.checkpoints.append(self.checkpoint(diffusion, "final.dgdf"))
        summary.final_step = self.step
        summary.smoothed_loss = self._smoothed
        logger.info(
            f"Trening zakończony na kroku {self.step}"
            + (f", strata wygładzona {self._smoothed:.4f}" if self._smoothed is not None else "")
        )
        return summary


def read_loss_log(path: Path) -> List[dict]:
    """Wczytaj loss.csv jako listę słowników."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != LOSS_COLUMNS:
            raise ValueError(f"{path}: nieoczekiwany nagłówek {reader.fieldnames}")
        return [
            {"step": int(row["step"]), "loss": float(row["loss"]), "smoothed": float(row["smoothed"])}
            for row in reader
        ]
