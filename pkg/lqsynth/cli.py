"""
LQ Synth CLI
============
Interfejs wiersza poleceń: korpus toy, trening DDPM, degradacje, synteza par,
krzywe t, ewaluacja odległości Frécheta, arkusz t i próbkowanie.

Kody wyjścia: 0 = sukces, 1 = błąd użytkownika, 2 = błąd wewnętrzny.
"""

import asyncio
import functools
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from loguru import logger
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from lqsynth.core.errors import LqSynthError

LOG_FORMAT = "<dim>{time:HH:mm:ss}</dim> | <level>{level: <8}</level> | <level>{message}</level>"

def _to_stderr(message: str) -> None:
    sys.stderr.write(message)


# Konfiguracja loggera (strumień stderr rozwiązywany przy każdym zapisie)
logger.remove()
_stderr_sink = logger.add(_to_stderr, format=LOG_FORMAT, level="INFO")

app = typer.Typer(
    name="lqsynth",
    help="LQ Synth - Synteza realistycznych par HQ-LQ metodą dyfuzyjną",
    add_completion=False,
)

console = Console()


# ==================== Pomocnicze ====================

def _pick(value: Any, default: Any) -> Any:
    """Flaga CLI ma pierwszeństwo przed konfiguracją."""
    return default if value is None else value


def _run_dir(out: Optional[Path], settings, command: str) -> Path:
    """Katalog przebiegu: --out albo <runs_dir>/<komenda>."""
    return Path(out) if out is not None else Path(settings.runs_dir) / command


def _handle_errors(func):
    """Mapuj wyjątki na kody wyjścia 1 (użytkownik) i 2 (wewnętrzny)."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except typer.Exit:
            raise
        except (LqSynthError, typer.BadParameter) as e:
            console.print(f"[red]Błąd: {e}[/red]")
            raise typer.Exit(code=1)
        except Exception as e:
            logger.exception("Błąd wewnętrzny")
            console.print(f"[red]Błąd wewnętrzny: {type(e).__name__}: {e}[/red]")
            raise typer.Exit(code=2)

    return wrapper


class _RunLog:
    """Plik run.log w katalogu przebiegu (na czas trwania komendy)."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self._sink: Optional[int] = None

    def __enter__(self) -> "_RunLog":
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._sink = logger.add(self.run_dir / "run.log", format=LOG_FORMAT, level="DEBUG")
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._sink is not None:
            logger.remove(self._sink)


def _resolved_config(overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    from lqsynth.config.settings import get_settings

    config = get_settings().model_dump(mode="json")
    config["overrides"] = overrides or {}
    return config


def _load_model(checkpoint: Path):
    """Zamrożona kopia EMA i harmonogram z checkpointu."""
    from lqsynth.core.diffusion import linear_schedule
    from lqsynth.modules.data_io import load_checkpoint

    ckpt = load_checkpoint(checkpoint)
    return ckpt.model.ema_copy(), linear_schedule(config=ckpt.diffusion)


def _hq_items(source: Path) -> List[Path]:
    """Ścieżki HQ z katalogu lub manifestu."""
    from lqsynth.modules.data_io import DatasetManifest, list_images

    source = Path(source)
    if source.is_file() or (source / "manifest.json").exists():
        manifest = DatasetManifest.load(source)
        return manifest.paths()
    items = list_images(source)
    if not items:
        raise typer.BadParameter(f"Brak obrazów PNG w {source}")
    return items


def _corpus_images(corpus: Path):
    from lqsynth.modules.data_io import DatasetManifest

    corpus = Path(corpus)
    if corpus.is_dir() and not (corpus / "manifest.json").exists():
        manifest = DatasetManifest.from_directory(corpus)
    elif corpus.exists():
        manifest = DatasetManifest.load(corpus)
    else:
        raise typer.BadParameter(f"Brak korpusu: {corpus}")
    try:
        manifest.validate()
    except (ValueError, FileNotFoundError) as e:
        raise typer.BadParameter(f"Niepoprawny manifest {corpus}: {e}")
    if not manifest.entries:
        raise typer.BadParameter(f"Pusty korpus: {corpus}")
    images = manifest.load_images("train") or manifest.load_images()
    return manifest, images


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        console=console,
    )


@app.callback()
def configure(
    config: Optional[Path] = typer.Option(
        None, "--config", "-c", help="Plik klucz=wartość (domyślnie .env)"
    ),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Poziom logowania"),
):
    """
    Wczytaj konfigurację i ustaw logowanie.
    """
    global _stderr_sink
    from lqsynth.config.settings import reload_settings
    from lqsynth.core.tensor import configure_engine

    if config is not None and not config.exists():
        console.print(f"[red]Błąd: brak pliku konfiguracji: {config}[/red]")
        raise typer.Exit(code=1)
    try:
        settings = reload_settings(config)
    except ValueError as e:
        console.print(f"[red]Błąd konfiguracji: {e}[/red]")
        raise typer.Exit(code=1)
    configure_engine(settings.tensor)

    logger.remove(_stderr_sink)
    level = (log_level or ("DEBUG" if settings.debug else settings.log_level)).upper()
    _stderr_sink = logger.add(_to_stderr, format=LOG_FORMAT, level=level)


# ==================== Korpus ====================

@app.command("make-toy-did")
@_handle_errors
def make_toy_did(
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog wyjściowy (domyślnie <data_dir>/toy)"
    ),
    seed: int = typer.Option(0, "--seed", help="Ziarno główne"),
    count: Optional[int] = typer.Option(None, "--count", "-n", help="Liczba obrazów korpusu"),
    size: Optional[int] = typer.Option(None, "--size", help="Bok czystego obrazu"),
    profile: Optional[str] = typer.Option(None, "--profile", help="Profil degradacji: none | heavy"),
    hq_count: int = typer.Option(0, "--hq-count", help="Dodatkowy zbiór HQ do syntezy (0 = brak)"),
):
    """
    Zbuduj korpus "prawdziwych" LQ (i opcjonalnie zbiór HQ).
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.modules import data_io

    settings = get_settings()
    out = _pick(out, settings.data_dir / "toy")
    toy = settings.toy_corpus.model_copy(
        update={
            "corpus_size": _pick(count, settings.toy_corpus.corpus_size),
            "image_size": _pick(size, settings.toy_corpus.image_size),
        }
    )
    profile = _pick(profile, toy.severity_profile)
    if profile not in ("none", "heavy"):
        raise typer.BadParameter(f"Nieznany profil: {profile}")

    with _RunLog(out):
        with Progress(SpinnerColumn(), TextColumn("{task.description}"), console=console) as progress:
            task = progress.add_task("Generowanie korpusu...", total=None)
            manifest = data_io.make_toy_did(
                out,
                toy,
                seed=seed,
                severity_profile=profile,
                target_scale=settings.degradation.target_scale,
            )
            if hq_count:
                progress.update(task, description="Generowanie zbioru HQ...")
                data_io.make_hq_set(out / "hq", hq_count, toy.image_size, seed)
            progress.remove_task(task)

        data_io.write_run_record(
            out,
            "make-toy-did",
            _resolved_config({"profile": profile, "hq_count": hq_count}),
            {"master": seed},
        )

    console.print(f"[green]Korpus gotowy:[/green] {len(manifest.entries)} obrazów → {out}")


# ==================== Trening ====================

@app.command()
@_handle_errors
def train(
    data: Path = typer.Option(..., "--data", "-d", help="Manifest lub katalog korpusu"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog przebiegu (domyślnie <runs_dir>/train)"
    ),
    t_total: Optional[int] = typer.Option(None, "--t-total", help="Liczba kroków dyfuzji T"),
    batch: Optional[int] = typer.Option(None, "--batch", help="Rozmiar wsadu"),
    lr: Optional[float] = typer.Option(None, "--lr", help="Współczynnik uczenia"),
    ema: Optional[float] = typer.Option(None, "--ema", help="Zanik EMA"),
    iters: Optional[int] = typer.Option(None, "--iters", help="Liczba iteracji"),
    patch: Optional[int] = typer.Option(None, "--patch", help="Bok wycinka"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Ziarno treningu"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Wznów z checkpointu"),
):
    """
    Trenuj DDPM na wycinkach korpusu LQ.
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.core.denoiser import DenoiserModel, UNetConfig
    from lqsynth.core.diffusion import DiffusionConfig, linear_schedule
    from lqsynth.core.rng import Rng
    from lqsynth.modules.data_io import load_checkpoint, write_run_record
    from lqsynth.modules.trainer import Trainer, TrainerConfig

    settings = get_settings()
    out = _run_dir(out, settings, "train")
    base = TrainerConfig.from_settings(settings)
    config = replace(
        base,
        batch_size=_pick(batch, base.batch_size),
        learning_rate=_pick(lr, base.learning_rate),
        ema_decay=_pick(ema, base.ema_decay),
        patch_size=_pick(patch, base.patch_size),
        seed=_pick(seed, base.seed),
    )
    iterations = _pick(iters, settings.training.iterations)
    if iterations < 0:
        raise typer.BadParameter("--iters musi być nieujemne")
    if not 0.0 < config.ema_decay < 1.0:
        raise typer.BadParameter("--ema musi leżeć w (0, 1)")

    with _RunLog(out):
        _, images = _corpus_images(data)
        if resume is not None:
            ckpt = load_checkpoint(resume)
            if t_total is not None and t_total != ckpt.diffusion.total_steps:
                raise typer.BadParameter(
                    f"--t-total {t_total} niezgodne z checkpointem ({ckpt.diffusion.total_steps})"
                )
            model, diffusion, adam_state, start = ckpt.model, ckpt.diffusion, ckpt.adam, ckpt.step
            logger.info(f"Wznawiam trening od kroku {start}")
        else:
            base_diffusion = DiffusionConfig.from_settings(settings.diffusion)
            total = _pick(t_total, base_diffusion.total_steps)
            diffusion = replace(
                base_diffusion,
                total_steps=total,
                t_max_face=min(base_diffusion.t_max_face, total),
                t_max_natural=min(base_diffusion.t_max_natural, total),
            )
            unet = UNetConfig.from_settings(settings.denoiser, total_steps=total)
            model = DenoiserModel.init(unet, Rng(config.seed).child("init"))
            adam_state, start = None, 0

        sched = linear_schedule(config=diffusion)
        trainer = Trainer(model, sched, images, config, out, adam_state=adam_state, start_step=start)

        with _progress() as progress:
            task = progress.add_task("Trening...", total=iterations)
            summary = trainer.run(
                iterations,
                on_step=lambda step, loss: progress.update(
                    task, advance=1, description=f"Trening (strata {loss:.4f})"
                ),
            )

        final = summary.checkpoints[-1]
        write_run_record(
            out,
            "train",
            _resolved_config({"trainer": config.to_dict(), "iterations": iterations}),
            {"training": config.seed, "init": config.seed},
            checkpoint=final,
            extra={
                "diffusion": diffusion.to_dict(),
                "unet": model.config.to_dict(),
                "start_step": summary.start_step,
                "final_step": summary.final_step,
                "resumed_from": str(resume) if resume else None,
            },
        )

    table = Table(title="Trening zakończony")
    table.add_column("Parametr", style="cyan")
    table.add_column("Wartość")
    table.add_row("Kroki", f"{summary.start_step} → {summary.final_step}")
    table.add_row("Parametry", str(model.param_count()))
    if summary.smoothed_loss is not None:
        table.add_row("Strata (wygładzona)", f"{summary.smoothed_loss:.4f}")
    table.add_row("Checkpoint", str(final))
    console.print(table)


# ==================== Degradacje ====================

@app.command()
@_handle_errors
def degrade(
    input: Path = typer.Option(..., "--input", "-i", help="Katalog lub manifest HQ"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog wyjściowy (domyślnie <runs_dir>/degrade)"
    ),
    kind: str = typer.Option("high_order", "--kind", "-k", help="bicubic | classical | shuffle | high_order"),
    scale: Optional[float] = typer.Option(None, "--scale", "-s", help="Współczynnik pomniejszenia HQ→LQ"),
    seed: int = typer.Option(0, "--seed", help="Ziarno główne"),
    workers: int = typer.Option(4, "--workers", "-w", help="Równoległe operacje na plikach"),
):
    """
    Zastosuj ręczny potok degradacji (bez dyfuzji).
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.modules.degradations import DegradationKind, DegradationRanges

    settings = get_settings()
    out = _run_dir(out, settings, "degrade")
    try:
        kind_enum = DegradationKind(kind)
    except ValueError:
        raise typer.BadParameter(f"Nieznany rodzaj degradacji: {kind}")
    ranges = DegradationRanges.from_settings(settings.degradation)
    if scale is not None:
        if scale <= 0:
            raise typer.BadParameter("--scale musi być dodatnie")
        ranges = replace(ranges, target_scale=1.0 / scale)

    with _RunLog(out):
        items = _hq_items(input)
        records = asyncio.run(_run_degrade(items, out, kind_enum, ranges, seed, workers))
        (out / "degradations.json").write_text(json.dumps(records, indent=2), encoding="utf-8")
        from lqsynth.modules.data_io import write_run_record

        write_run_record(
            out,
            "degrade",
            _resolved_config({"kind": kind_enum.value, "target_scale": ranges.target_scale}),
            {"master": seed},
        )

    console.print(f"[green]Zdegradowano {len(records)} obrazów[/green] → {out / 'lq'}")


async def _run_degrade(items, out: Path, kind, ranges, seed: int, workers: int):
    """Degradacja plików równolegle; obraz i korzysta ze strumienia Rng(seed).child(i)."""
    from lqsynth.core.rng import Rng
    from lqsynth.modules.data_io import load_image, save_image
    from lqsynth.modules.degradations import apply, sample_pipeline

    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(max(1, workers))

    def _one(index: int, path: Path) -> Dict[str, Any]:
        image = load_image(path)
        sample = sample_pipeline(kind, Rng(seed).child(index), ranges, image.shape[:2])
        target = save_image(apply(image, sample), out / "lq" / path.name)
        return {
            "index": index,
            "hq_path": str(path),
            "lq_path": str(target),
            "degradation": sample.to_dict(),
        }

    async def _run(index: int, path: Path):
        async with semaphore:
            return await loop.run_in_executor(None, _one, index, path)

    return list(await asyncio.gather(*(_run(i, p) for i, p in enumerate(items))))


# ==================== Synteza ====================

@app.command()
@_handle_errors
def synth(
    hq: Optional[Path] = typer.Option(None, "--hq", help="Katalog lub manifest HQ"),
    checkpoint: Path = typer.Option(..., "--checkpoint", "-m", help="Checkpoint denoisera"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog wyjściowy (domyślnie <runs_dir>/synth)"
    ),
    profile: Optional[str] = typer.Option(None, "--profile", help="face (t ≤ 500) | natural (t ≤ 250)"),
    t_max: Optional[int] = typer.Option(None, "--t-max", help="Górna granica t (nadpisuje profil)"),
    t_min: Optional[int] = typer.Option(None, "--t-min", help="Dolna granica t"),
    kind: Optional[str] = typer.Option(None, "--kind", "-k", help="Rodzina degradacji początkowej"),
    guard: Optional[bool] = typer.Option(None, "--guard/--no-guard", help="Strażnik struktury"),
    guard_db: Optional[float] = typer.Option(None, "--guard-db", help="Próg strażnika [dB]"),
    retries: Optional[int] = typer.Option(None, "--retries", help="Maks. liczba ponowień"),
    deterministic: Optional[bool] = typer.Option(
        None, "--deterministic/--stochastic", help="Odwrotny łańcuch bez szumu"
    ),
    seed: Optional[int] = typer.Option(None, "--seed", help="Ziarno główne"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Równoległość"),
    from_manifest: Optional[Path] = typer.Option(
        None, "--from-manifest", help="Odtwórz LQ z manifestu par"
    ),
):
    """
    Synteza par HQ-LQ: degradacja, dyfuzja do t, odwrotne odszumianie.
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.modules.data_io import write_run_record
    from lqsynth.modules.synthesis import SynthesisConfig, batch_synthesize

    settings = get_settings()
    out = _run_dir(out, settings, "synth")
    model, sched = _load_model(checkpoint)

    with _RunLog(out):
        if from_manifest is not None:
            count = _resynth_from_manifest(from_manifest, model, sched, out)
            write_run_record(
                out,
                "synth",
                _resolved_config({"from_manifest": str(from_manifest)}),
                {"manifest": str(from_manifest)},
                checkpoint=checkpoint,
            )
            console.print(f"[green]Odtworzono {count} par[/green] → {out / 'lq'}")
            return

        if hq is None:
            raise typer.BadParameter("Wymagane --hq (lub --from-manifest)")
        synth_settings = settings.synthesis.model_copy(
            update={
                "profile": _pick(profile, settings.synthesis.profile),
                "t_max": _pick(t_max, settings.synthesis.t_max),
                "t_min": _pick(t_min, settings.synthesis.t_min),
                "pipeline": _pick(kind, settings.synthesis.pipeline),
                "guard_enabled": _pick(guard, settings.synthesis.guard_enabled),
                "guard_db": _pick(guard_db, settings.synthesis.guard_db),
                "max_retries": _pick(retries, settings.synthesis.max_retries),
                "deterministic_reverse": _pick(deterministic, settings.synthesis.deterministic_reverse),
            }
        )
        try:
            cfg = SynthesisConfig.from_settings(
                settings.model_copy(update={"synthesis": synth_settings}), sched.config
            )
        except ValueError as e:
            raise typer.BadParameter(str(e))
        master_seed = _pick(seed, settings.synthesis.seed)
        items = _hq_items(hq)

        with Progress(SpinnerColumn(), TextColumn("{task.description}"), console=console) as progress:
            task = progress.add_task(f"Synteza {len(items)} par...", total=None)
            manifest = asyncio.run(
                batch_synthesize(
                    items,
                    model,
                    sched,
                    cfg,
                    master_seed=master_seed,
                    parallelism=_pick(workers, settings.synthesis.parallelism),
                    out_dir=out,
                    header={"checkpoint": str(checkpoint)},
                )
            )
            progress.remove_task(task)

        manifest_path = manifest.save(out / "pairs.json")
        write_run_record(
            out,
            "synth",
            _resolved_config({"synthesis": cfg.to_dict()}),
            {"master": master_seed},
            checkpoint=checkpoint,
            extra={"pairs": str(manifest_path), "acceptance_rate": manifest.acceptance_rate},
        )

    rejected = [r for r in manifest.records if not r.accepted]
    console.print(
        Panel(
            f"[bold]Zaakceptowane: {len(manifest.accepted)}/{len(manifest.records)}[/bold] "
            f"({manifest.acceptance_rate:.0%})",
            title="Synteza zakończona",
        )
    )
    if rejected:
        table = Table(title="Odrzucone pary")
        table.add_column("#", style="red")
        table.add_column("HQ")
        table.add_column("Powód")
        for record in rejected[:10]:
            table.add_row(str(record.index), str(record.hq_path), record.reason or "")
        console.print(table)
    console.print(f"[green]Manifest zapisany:[/green] {manifest_path}")


def _resynth_from_manifest(path: Path, model, sched, out: Path) -> int:
    from lqsynth.modules.data_io import load_image, save_image
    from lqsynth.modules.synthesis import PairManifest, resynthesize

    manifest = PairManifest.load(path)
    count = 0
    for record in manifest.accepted:
        if record.meta is None or record.hq_path is None:
            logger.warning(f"Rekord {record.index} bez pochodzenia - pomijam")
            continue
        hq = load_image(Path(record.hq_path))
        lq = resynthesize(hq, record.meta, model, sched)
        save_image(lq, out / "lq" / Path(record.hq_path).name)
        count += 1
    return count


# ==================== Metryki ====================

def _extractor(settings, name: Optional[str], checkpoint: Optional[Path]):
    from lqsynth.modules.metrics import make_extractor

    metrics = settings.metrics.model_copy(update={"extractor": _pick(name, settings.metrics.extractor)})
    model = sched = None
    if metrics.extractor == "denoiser_features":
        if checkpoint is None:
            raise typer.BadParameter("Cechy denoisera wymagają --checkpoint")
        model, sched = _load_model(checkpoint)
    try:
        return make_extractor(metrics, model, sched)
    except ValueError as e:
        raise typer.BadParameter(str(e))


@app.command()
@_handle_errors
def sweep(
    hq: Path = typer.Option(..., "--hq", help="Katalog lub manifest HQ"),
    corpus: Path = typer.Option(..., "--corpus", help="Manifest korpusu LQ"),
    checkpoint: Path = typer.Option(..., "--checkpoint", "-m", help="Checkpoint denoisera"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog wyjściowy (domyślnie <runs_dir>/sweep)"
    ),
    kinds: Optional[List[str]] = typer.Option(None, "--kind", "-k", help="Rodziny (wielokrotnie)"),
    t_grid: Optional[List[int]] = typer.Option(None, "--t", help="Wartości t (wielokrotnie)"),
    extractor: Optional[str] = typer.Option(None, "--extractor", help="patch_stats | denoiser_features"),
    seed: int = typer.Option(0, "--seed", help="Ziarno główne"),
    deterministic: bool = typer.Option(False, "--deterministic", help="Odwrotny łańcuch bez szumu"),
):
    """
    Krzywe odległości Frécheta i PSNR w funkcji t dla rodzin degradacji → CSV.
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.modules.data_io import load_image, write_run_record
    from lqsynth.modules.degradations import DegradationKind, DegradationRanges
    from lqsynth.modules.metrics import (
        extract_features,
        fit_stats,
        sweep_curves,
        trend_summary,
        write_curves_csv,
    )

    settings = get_settings()
    out = _run_dir(out, settings, "sweep")
    kinds = kinds or [k.value for k in DegradationKind]
    t_grid = t_grid or list(settings.metrics.sweep_t_grid)
    model, sched = _load_model(checkpoint)
    sched.check_step(t_grid, allow_zero=True)
    kind_extractor = _extractor(settings, extractor, checkpoint)

    with _RunLog(out):
        _, corpus_images = _corpus_images(corpus)
        corpus_stats = fit_stats(extract_features(corpus_images, kind_extractor))
        hq_images = [load_image(p) for p in _hq_items(hq)]

        with Progress(SpinnerColumn(), TextColumn("{task.description}"), console=console) as progress:
            task = progress.add_task(
                f"Krzywe: {len(kinds)} rodzin × {len(t_grid)} wartości t...", total=None
            )
            points = sweep_curves(
                hq_images,
                corpus_stats,
                model,
                sched,
                kinds,
                t_grid,
                kind_extractor,
                ranges=DegradationRanges.from_settings(settings.degradation),
                seed=seed,
                deterministic=deterministic,
                covariance_eps=settings.metrics.covariance_eps,
            )
            progress.remove_task(task)

        csv_path = write_curves_csv(points, out / "curves.csv")
        trends = trend_summary(points)
        write_run_record(
            out,
            "sweep",
            _resolved_config({"kinds": kinds, "t_grid": t_grid, "extractor": kind_extractor.kind}),
            {"master": seed},
            checkpoint=checkpoint,
            extra={"curves": str(csv_path), "trends": trends},
        )

    table = Table(title="Trendy względem t (Spearman ρ)")
    table.add_column("Rodzina", style="cyan")
    table.add_column("FD(t=min)")
    table.add_column("ρ odległość")
    table.add_column("ρ PSNR")
    for kind in kinds:
        rows = sorted((p for p in points if p.pipeline_kind == kind), key=lambda p: p.t)
        trend = trends.get(kind, {})
        table.add_row(
            kind,
            f"{rows[0].frechet:.4f}" if rows else "-",
            f"{trend['frechet']:.3f}" if "frechet" in trend else "-",
            f"{trend['psnr_mean']:.3f}" if "psnr_mean" in trend else "-",
        )
    console.print(table)
    console.print(f"[green]Krzywe zapisane:[/green] {csv_path}")


@app.command("eval")
@_handle_errors
def evaluate(
    corpus: Path = typer.Option(..., "--corpus", help="Manifest korpusu LQ"),
    lq: List[Path] = typer.Option(..., "--lq", help="Katalog LQ do oceny (wielokrotnie)"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog wyjściowy (domyślnie <runs_dir>/eval)"
    ),
    extractor: Optional[str] = typer.Option(None, "--extractor", help="patch_stats | denoiser_features"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", "-m", help="Checkpoint (cechy denoisera)"),
):
    """
    Odległość Frécheta zbiorów LQ od statystyk korpusu (jeden wiersz na zbiór).
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.modules.data_io import list_images, load_image, write_run_record
    from lqsynth.modules.metrics import extract_features, fit_stats, frechet_distance

    settings = get_settings()
    out = _run_dir(out, settings, "eval")
    kind_extractor = _extractor(settings, extractor, checkpoint)

    with _RunLog(out):
        _, corpus_images = _corpus_images(corpus)
        corpus_stats = fit_stats(extract_features(corpus_images, kind_extractor))
        (out / "corpus_stats.json").write_text(
            json.dumps(corpus_stats.to_dict()), encoding="utf-8"
        )

        results = []
        for directory in lq:
            paths = list_images(directory)
            if not paths:
                raise typer.BadParameter(f"Brak obrazów PNG w {directory}")
            stats = fit_stats(extract_features([load_image(p) for p in paths], kind_extractor))
            distance = frechet_distance(stats, corpus_stats, eps=settings.metrics.covariance_eps)
            results.append({"set": str(directory), "n": len(paths), "frechet": distance})

        (out / "eval.json").write_text(json.dumps(results, indent=2), encoding="utf-8")
        write_run_record(
            out,
            "eval",
            _resolved_config({"extractor": kind_extractor.kind, "lq": [str(p) for p in lq]}),
            {},
            checkpoint=checkpoint,
            extra={"results": results},
        )

    table = Table(title=f"Odległość Frécheta od korpusu ({kind_extractor.kind})")
    table.add_column("Zbiór LQ", style="cyan")
    table.add_column("N")
    table.add_column("Odległość", style="bold")
    for row in sorted(results, key=lambda r: r["frechet"]):
        table.add_row(row["set"], str(row["n"]), f"{row['frechet']:.4f}")
    console.print(table)


# ==================== Podgląd ====================

@app.command()
@_handle_errors
def tsweep(
    hq: Path = typer.Option(..., "--hq", help="Obraz HQ (PNG)"),
    checkpoint: Path = typer.Option(..., "--checkpoint", "-m", help="Checkpoint denoisera"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog wyjściowy (domyślnie <runs_dir>/tsweep)"
    ),
    t_values: Optional[List[int]] = typer.Option(None, "--t", help="Wartości t (wielokrotnie)"),
    kind: Optional[str] = typer.Option(None, "--kind", "-k", help="Rodzina degradacji początkowej"),
    seed: int = typer.Option(0, "--seed", help="Ziarno"),
):
    """
    Arkusz porównawczy: HQ, d(y) i LQ dla rosnącego t.
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.core.rng import Rng
    from lqsynth.modules.data_io import load_image, write_run_record
    from lqsynth.modules.synthesis import SynthesisConfig, contact_sheet, t_sweep

    settings = get_settings()
    out = _run_dir(out, settings, "tsweep")
    model, sched = _load_model(checkpoint)
    cfg = SynthesisConfig.from_settings(settings, sched.config)
    if kind is not None:
        cfg = replace(cfg, pipeline=kind)
    t_values = t_values or [250, 500, 750]

    with _RunLog(out):
        panels = t_sweep(load_image(hq), model, sched, cfg, Rng(seed), t_values)
        sheet = contact_sheet(panels, out / "tsweep.png")
        write_run_record(
            out,
            "tsweep",
            _resolved_config({"t_values": t_values, "pipeline": cfg.pipeline.value}),
            {"master": seed},
            checkpoint=checkpoint,
        )

    console.print(f"[green]Arkusz zapisany:[/green] {sheet}")


@app.command()
@_handle_errors
def sample(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-m", help="Checkpoint denoisera"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Katalog wyjściowy (domyślnie <runs_dir>/sample)"
    ),
    count: int = typer.Option(8, "--count", "-n", help="Liczba próbek"),
    size: int = typer.Option(32, "--size", help="Bok próbki"),
    seed: int = typer.Option(0, "--seed", help="Ziarno"),
    deterministic: bool = typer.Option(False, "--deterministic", help="Odwrotny łańcuch bez szumu"),
):
    """
    Próbki bezwarunkowe z czystego szumu (pełny łańcuch od t = T).
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.core.rng import Rng
    from lqsynth.modules.data_io import save_image, write_run_record
    from lqsynth.modules.synthesis import contact_sheet, sample_unconditional

    if count < 1:
        raise typer.BadParameter("--count musi być dodatnie")
    out = _run_dir(out, get_settings(), "sample")
    model, sched = _load_model(checkpoint)

    with _RunLog(out):
        with Progress(SpinnerColumn(), TextColumn("{task.description}"), console=console) as progress:
            task = progress.add_task(f"Próbkowanie {count} obrazów (T={sched.T})...", total=None)
            images = sample_unconditional(
                model, sched, count, size, Rng(seed), model.config.in_channels, deterministic
            )
            progress.remove_task(task)
        for index, image in enumerate(images):
            save_image(image, out / "samples" / f"{index:05d}.png")
        contact_sheet([(str(i), im) for i, im in enumerate(images)], out / "samples.png")
        write_run_record(
            out,
            "sample",
            _resolved_config({"count": count, "size": size, "deterministic": deterministic}),
            {"master": seed},
            checkpoint=checkpoint,
        )

    console.print(f"[green]Zapisano {count} próbek[/green] → {out / 'samples'}")


@app.command()
def version():
    """
    Wyświetl wersję.
    """
    from lqsynth.config.settings import get_settings
    from lqsynth.modules.data_io import version_string

    settings = get_settings()
    console.print(f"[bold]{settings.name}[/bold] v{settings.version}")
    console.print(f"Build: {version_string()}")


def main():
    """Główna funkcja CLI."""
    app()


if __name__ == "__main__":
    main()
