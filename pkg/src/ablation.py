"""Experiment grids: methods x activations, global scale schemes and leave-one-transform-out."""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from src.config import RunConfig
from src.data_loader import load_dataset
from src.dataset import SedDataset
from src.errors import ConfigError
from src.evaluation import evaluate_model
from src.trainer import train
from src.types import Activation, Method, ScaleMode, TransformId

logger = logging.getLogger(__name__)

GRIDS = ("methods", "scales", "exclude")
RUN_FILE = "run.json"
LOG_FILE = "train_log.jsonl"
SCALE_GRID = (3, 4, 5, 6)
METHOD_GRID = (Method.MT, Method.MT_RDA, Method.CR_RDA, Method.MT_CR_RDA)


@dataclass(frozen=True)
class Cell:
    """One row of an ablation table: a name plus the config keys it overrides."""

    name: str
    order: int
    overrides: dict = field(default_factory=dict)


def grid_cells(grid: str, with_baseline: bool = False) -> list[Cell]:
    """Cells of a named grid, in table order."""
    cells: list[Cell] = []
    if grid == "methods":
        methods = ((Method.SUPERVISED,) if with_baseline else ()) + METHOD_GRID
        for activation in (Activation.GLU, Activation.CG):
            for method in methods:
                cells.append(
                    Cell(
                        f"{method.value}/{activation.value}",
                        len(cells),
                        {"method": method, "activation": activation},
                    )
                )
    elif grid == "scales":
        for mode in (ScaleMode.FIXED, ScaleMode.RANDOM):
            for scale in SCALE_GRID:
                cells.append(
                    Cell(
                        f"{mode.value}/{scale}",
                        len(cells),
                        {"scale_mode": mode, "global_scale": scale},
                    )
                )
    elif grid == "exclude":
        cells.append(Cell("all", 0, {"method": Method.CR_RDA, "exclude": ()}))
        for transform in TransformId:
            overrides = {"method": Method.CR_RDA, "exclude": (transform,)}
            cells.append(Cell(f"without-{transform.value}", len(cells), overrides))
    else:
        raise ConfigError(f"Unknown grid '{grid}'; choose from {', '.join(GRIDS)}")
    return cells


def _cell_dir(out_dir: Path, cell: Cell, seed: int) -> Path:
    return out_dir / cell.name.replace("/", "_") / f"seed{seed}"


def run_cell(
    base: RunConfig, cell: Cell, seed: int, dataset: SedDataset, out_dir: Path, grid: str = ""
) -> dict:
    """Train and test one (cell, seed); the run record is also written as run.json."""
    config = base.with_overrides(cell.overrides)
    run_dir = _cell_dir(out_dir, cell, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    header = {"run_config": config.to_dict(), "cell": cell.name}
    result = train(
        dataset, config.to_train_config(), seed, log_path=run_dir / LOG_FILE, header=header
    )

    test = dataset.splits.get("test") or dataset.splits.get("validation", [])
    report = evaluate_model(result.student, test, dataset.feature_cfg, config.median_filter_s)
    record = {
        "grid": grid,
        "cell": cell.name,
        "order": cell.order,
        "seed": seed,
        "test_collar_f1": report.macro_f1,
        "per_class_f1": {str(c): s.f1 for c, s in report.per_class.items()},
        "config": config.to_dict(),
    }
    (run_dir / RUN_FILE).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    logger.info("cell %s seed %d: test collar F1 %.4f", cell.name, seed, report.macro_f1)
    return record


def _run_cell_job(job: tuple[dict, Cell, int, str, str, str]) -> dict:
    base_dict, cell, seed, dataset_path, out_dir, grid = job
    return run_cell(
        RunConfig.from_dict(base_dict), cell, seed, load_dataset(dataset_path), Path(out_dir), grid
    )


def run_grid(
    base: RunConfig,
    grid: str,
    dataset: SedDataset | None = None,
    with_baseline: bool = False,
) -> pd.DataFrame:
    """Run every (cell, seed) of `grid` and return the aggregated table.

    With `base.jobs > 1` cells run in separate processes, each loading the
    dataset from `base.dataset`.
    """
    cells = grid_cells(grid, with_baseline)
    out_dir = Path(base.out_dir)
    jobs = [(cell, seed) for cell in cells for seed in base.seeds]
    logger.info("Grid %s: %d cells x %d seeds", grid, len(cells), len(base.seeds))

    if base.jobs > 1:
        if base.dataset is None:
            raise ConfigError("parallel ablation needs the dataset path in the config")
        payload = [
            (base.to_dict(), cell, seed, str(base.dataset), str(out_dir), grid)
            for cell, seed in jobs
        ]
        with ProcessPoolExecutor(max_workers=base.jobs) as pool:
            records = list(pool.map(_run_cell_job, payload))
    else:
        if dataset is None:
            if base.dataset is None:
                raise ConfigError("ablation needs a dataset")
            dataset = load_dataset(base.dataset)
        records = [run_cell(base, cell, seed, dataset, out_dir, grid) for cell, seed in jobs]

    table = aggregate_runs(records)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / f"{grid}_results.csv", index=False)
    return table


def aggregate_runs(records: list[dict]) -> pd.DataFrame:
    """Mean and population std of test collar F1 per cell, in grid order."""
    columns = ["cell", "n_seeds", "f1_mean", "f1_std"]
    if not records:
        return pd.DataFrame(columns=columns)
    frame = pd.DataFrame.from_records(records)
    grouped = frame.groupby(["order", "cell"], sort=True)["test_collar_f1"]
    table = grouped.agg(n_seeds="count", f1_mean="mean", f1_std=lambda s: s.std(ddof=0))
    return table.reset_index().drop(columns="order")[columns]


def aggregate_directory(out_dir: Path | str, grid: str | None = None) -> pd.DataFrame:
    """Re-aggregate every run.json found below `out_dir`, optionally for one grid."""
    records = [
        json.loads(path.read_text()) for path in sorted(Path(out_dir).rglob(RUN_FILE))
    ]
    if grid is not None:
        records = [r for r in records if r.get("grid") == grid]
    return aggregate_runs(records)
