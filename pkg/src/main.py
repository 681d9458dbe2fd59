"""CLI entry point for the semi-supervised sound event detection toolkit."""

import json
import logging
from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import typer

from src.ablation import GRIDS, run_grid
from src.augment_batch import augment_clips, augmented_dataset, feature_archive
from src.checkpoint import load_checkpoint
from src.config import resolve_config
from src.data_loader import load_dataset, save_dataset
from src.dataset import CorpusConfig, dataset_summary, generate_corpus
from src.dsp import FeatureConfig
from src.errors import ConfigError, DataError, SedError
from src.evaluation import MEDIAN_FILTER_S, evaluate_model
from src.output import (
    export_ablation_to_csv,
    print_ablation_table,
    print_report,
    write_jsonl,
    write_report_json,
)
from src.trainer import train
from src.types import ModelState, ScaleMode, ScaleScheme, TransformId

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

app = typer.Typer(help="Semi-supervised sound event detection with random audio augmentation")


def _fail(e: SedError) -> typer.Exit:
    typer.echo(f"Error: {e}", err=True)
    return typer.Exit(code=e.exit_code)


def _transform_list(raw: Optional[str]) -> Optional[list[TransformId]]:
    if raw is None:
        return None
    try:
        return [TransformId(part.strip()) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Unknown transform in '{raw}': {e}") from e


@app.callback()
def main(
    verbose: Annotated[
        bool, typer.Option("-v", "--verbose", help="Log at DEBUG level")
    ] = False,
) -> None:
    """Configure logging for every subcommand."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True
    )


@app.command("synth-data")
def synth_data(
    out: Annotated[Path, typer.Option("-o", "--out", help="Dataset directory to write")],
    seed: Annotated[int, typer.Option("-s", "--seed", help="Corpus seed")] = 0,
    force: Annotated[
        bool, typer.Option("--force", help="Overwrite a non-empty output directory")
    ] = False,
    classes: Annotated[int, typer.Option("--classes", help="Number of event classes")] = 4,
    clip_seconds: Annotated[float, typer.Option("--clip-seconds", help="Clip length")] = 8.0,
    train_strong: Annotated[int, typer.Option("--train-strong")] = 200,
    train_weak: Annotated[int, typer.Option("--train-weak")] = 200,
    train_unlabeled: Annotated[int, typer.Option("--train-unlabeled")] = 600,
    validation: Annotated[int, typer.Option("--validation")] = 100,
    test: Annotated[int, typer.Option("--test")] = 200,
    full_scale: Annotated[
        bool,
        typer.Option("--full-scale", help="2048-sample window, 255 hop, 128 mels, 10 s clips"),
    ] = False,
    audio_format: Annotated[
        str, typer.Option("--audio-format", help="wav (16-bit PCM) or ssf (float32)")
    ] = "wav",
) -> None:
    """Generate a synthetic strong / weak / unlabeled corpus on disk."""
    try:
        try:
            corpus = CorpusConfig(
                n_classes=classes,
                n_train_strong=train_strong,
                n_train_weak=train_weak,
                n_train_unlabeled=train_unlabeled,
                n_validation=validation,
                n_test=test,
            )
            features = (
                FeatureConfig.full_scale()
                if full_scale
                else FeatureConfig(clip_seconds=clip_seconds)
            )
            if audio_format not in ("wav", "ssf"):
                raise ValueError(f"audio format must be wav or ssf, got '{audio_format}'")
        except ValueError as e:
            raise ConfigError(str(e)) from e
        logger.info(
            "Resolved config: %s",
            {"seed": seed, "corpus": corpus.to_dict(), "features": features.to_dict()},
        )
        dataset = generate_corpus(corpus, features, seed)
        save_dataset(dataset, out, audio_format=audio_format, force=force)
    except SedError as e:
        raise _fail(e) from e

    typer.echo(dataset_summary(dataset).to_string(index=False))
    typer.echo(f"\nDataset written to: {out}")


@app.command()
def augment(
    dataset_dir: Annotated[Path, typer.Argument(help="Input dataset directory")],
    out: Annotated[Path, typer.Option("-o", "--out", help="Augmented dataset directory")],
    split: Annotated[str, typer.Option("--split", help="Split to augment")] = "train",
    batch_size: Annotated[
        int, typer.Option("-b", "--batch-size", help="Clips per mixup mini-batch")
    ] = 8,
    views: Annotated[int, typer.Option("-p", "--views", help="Transforms per clip (P)")] = 1,
    scale: Annotated[int, typer.Option("--scale", help="Global scale")] = 5,
    mode: Annotated[str, typer.Option("--mode", help="fixed or random scale")] = "random",
    seed: Annotated[int, typer.Option("-s", "--seed")] = 0,
    exclude: Annotated[
        Optional[str], typer.Option("--exclude", help="Comma-separated transforms to leave out")
    ] = None,
    inherit_labels: Annotated[
        bool, typer.Option("--inherit-labels", help="Keep labels verbatim instead of transporting")
    ] = False,
    force: Annotated[bool, typer.Option("--force")] = False,
) -> None:
    """Write augmented clips, transported labels and a policies.jsonl log."""
    try:
        try:
            scheme = ScaleScheme(mode=ScaleMode(mode), global_scale=scale)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        enabled = frozenset(TransformId) - frozenset(_transform_list(exclude) or ())
        if not enabled:
            raise ConfigError("every transform is excluded")
        if views < 1 or batch_size < 1:
            raise ConfigError("--views and --batch-size must be positive")

        dataset = load_dataset(dataset_dir)
        try:
            clips = dataset[split]
        except KeyError as e:
            raise DataError(str(e.args[0])) from e
        if TransformId.MIXUP in enabled and len(clips) < 2:
            raise ConfigError("mixup needs at least two clips; exclude it or add clips")
        logger.info(
            "Resolved config: %s",
            {
                "split": split,
                "batch_size": batch_size,
                "views": views,
                "scale": scale,
                "mode": scheme.mode.value,
                "seed": seed,
                "enabled": sorted(t.value for t in enabled),
                "inherit_labels": inherit_labels,
            },
        )
        augmented = augment_clips(
            dataset, clips, seed, views, scheme, enabled, batch_size, inherit_labels
        )
        save_dataset(augmented_dataset(dataset, split, augmented), out, force=force)
        write_jsonl((a.record for a in augmented), out / "policies.jsonl")
        np.savez_compressed(out / "features.npz", **feature_archive(augmented))
    except SedError as e:
        raise _fail(e) from e

    typer.echo(f"Augmented {len(augmented)} clips from '{split}' into: {out}")


@app.command("train")
def train_command(
    config_file: Annotated[
        Optional[Path], typer.Option("-c", "--config", help="key = value config file")
    ] = None,
    dataset: Annotated[Optional[Path], typer.Option("-d", "--dataset")] = None,
    out_dir: Annotated[Optional[Path], typer.Option("-o", "--out-dir")] = None,
    method: Annotated[
        Optional[str],
        typer.Option("-m", "--method", help="supervised, mt, mt_rda, cr_rda or mt_cr_rda"),
    ] = None,
    activation: Annotated[Optional[str], typer.Option("--activation", help="glu or cg")] = None,
    scale_mode: Annotated[Optional[str], typer.Option("--scale-mode")] = None,
    global_scale: Annotated[Optional[int], typer.Option("--global-scale")] = None,
    exclude: Annotated[Optional[str], typer.Option("--exclude")] = None,
    views: Annotated[Optional[int], typer.Option("-p", "--views")] = None,
    epochs: Annotated[Optional[int], typer.Option("-e", "--epochs")] = None,
    batch: Annotated[
        Optional[str], typer.Option("--batch", help="n_strong,n_weak,n_unlabeled")
    ] = None,
    steps_per_epoch: Annotated[Optional[int], typer.Option("--steps-per-epoch")] = None,
    seed: Annotated[
        Optional[int], typer.Option("-s", "--seed", help="Seed (default: first of seeds)")
    ] = None,
    workers: Annotated[Optional[int], typer.Option("--workers")] = None,
) -> None:
    """Train a student (and EMA teacher) and write checkpoints plus train.jsonl."""
    overrides = {
        "dataset": dataset,
        "out_dir": out_dir,
        "method": method,
        "activation": activation,
        "scale_mode": scale_mode,
        "global_scale": global_scale,
        "exclude": exclude,
        "views": views,
        "epochs": epochs,
        "batch": batch,
        "steps_per_epoch": steps_per_epoch,
        "workers": workers,
    }
    try:
        config = resolve_config(config_file, overrides)
        if config.dataset is None:
            raise ConfigError("no dataset given; use --dataset or 'dataset =' in the config")
        data = load_dataset(config.dataset)
        run_seed = config.seeds[0] if seed is None else seed
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        provenance = {"run_config": config.to_dict(), "seed": run_seed}
        (out / "run_config.json").write_text(json.dumps(provenance, indent=2, sort_keys=True))
        try:
            train_config = config.to_train_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        result = train(
            data,
            train_config,
            run_seed,
            log_path=out / "train.jsonl",
            checkpoint_dir=out,
            header={"run_config": config.to_dict()},
        )
    except SedError as e:
        raise _fail(e) from e

    last = result.log[-1]
    typer.echo(
        f"Trained {config.method.value} for {len(result.log)} epochs; "
        f"final val collar F1: {last['val_collar_f1']}"
    )
    typer.echo(f"Checkpoints and log written to: {out}")


@app.command()
def evaluate(
    checkpoint: Annotated[Path, typer.Argument(help="student.sedm or teacher.sedm")],
    dataset: Annotated[Path, typer.Argument(help="Dataset directory")],
    use_teacher: Annotated[
        bool, typer.Option("--use-teacher", help="Score the teacher file next to CHECKPOINT")
    ] = False,
    split: Annotated[str, typer.Option("--split")] = "test",
    median_filter_s: Annotated[float, typer.Option("--median-filter")] = MEDIAN_FILTER_S,
    json_out: Annotated[Optional[Path], typer.Option("--json-out", help="Write the report")] = None,
) -> None:
    """Median filter, decode and score a checkpoint on one split."""
    try:
        path = checkpoint
        if use_teacher and load_checkpoint(checkpoint).role != "teacher":
            path = checkpoint.with_name("teacher" + checkpoint.name.removeprefix("student"))
            if not path.exists():
                raise ConfigError(
                    f"--use-teacher: no teacher checkpoint at '{path}' "
                    "(only MeanTeacher methods keep one)"
                )
        state: ModelState = load_checkpoint(path).state
        data = load_dataset(dataset)
        try:
            clips = data[split]
        except KeyError as e:
            raise DataError(str(e.args[0])) from e
        if state.config.n_classes != data.n_classes:
            raise DataError(
                f"checkpoint has {state.config.n_classes} classes, dataset {data.n_classes}"
            )
        if state.config.n_mels != data.feature_cfg.n_mels:
            raise DataError(
                f"checkpoint expects {state.config.n_mels} mel bins, "
                f"dataset has {data.feature_cfg.n_mels}"
            )
        if any(clip.events is None for clip in clips):
            raise DataError(f"split '{split}' has clips without ground-truth events")
        logger.info(
            "Resolved config: %s",
            {"checkpoint": str(path), "split": split, "median_filter_s": median_filter_s},
        )
        report = evaluate_model(state, clips, data.feature_cfg, median_filter_s)
        if json_out is not None:
            write_report_json(report, json_out, {"checkpoint": str(path), "split": split})
    except SedError as e:
        raise _fail(e) from e

    print_report(report, title=f"{path.name} on {split}")


@app.command()
def ablate(
    grid: Annotated[str, typer.Option("-g", "--grid", help=", ".join(GRIDS))],
    config_file: Annotated[Optional[Path], typer.Option("-c", "--config")] = None,
    dataset: Annotated[Optional[Path], typer.Option("-d", "--dataset")] = None,
    out_dir: Annotated[Optional[Path], typer.Option("-o", "--out-dir")] = None,
    seeds: Annotated[Optional[str], typer.Option("--seeds", help="e.g. 0,1,2")] = None,
    epochs: Annotated[Optional[int], typer.Option("-e", "--epochs")] = None,
    jobs: Annotated[Optional[int], typer.Option("-j", "--jobs")] = None,
    with_baseline: Annotated[
        bool, typer.Option("--with-baseline", help="Add a supervised-only row")
    ] = False,
    csv_out: Annotated[Optional[Path], typer.Option("--csv", help="Export the table")] = None,
) -> None:
    """Run a grid over its seeds and print mean ± std test collar F1 per cell."""
    overrides = {
        "dataset": dataset,
        "out_dir": out_dir,
        "seeds": seeds,
        "epochs": epochs,
        "jobs": jobs,
    }
    try:
        config = resolve_config(config_file, overrides)
        if grid not in GRIDS:
            raise ConfigError(f"Unknown grid '{grid}'; choose from {', '.join(GRIDS)}")
        table = run_grid(config, grid, with_baseline=with_baseline)
        if csv_out is not None:
            export_ablation_to_csv(table, csv_out)
    except SedError as e:
        raise _fail(e) from e

    print_ablation_table(table, grid)


if __name__ == "__main__":
    app()
