"""Output formatting and export for evaluation reports and ablation tables."""

import csv
import json
from collections.abc import Iterable
from pathlib import Path

import pandas as pd

from src.errors import DataError
from src.types import MetricReport


def report_to_dict(report: MetricReport) -> dict:
    """JSON-ready report: macro F1 plus per-class counts and scores."""
    return {
        "macro_f1": report.macro_f1,
        "active_classes": report.active_classes,
        "per_class": {
            str(c): {
                "tp": s.tp,
                "fp": s.fp,
                "fn": s.fn,
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
            }
            for c, s in sorted(report.per_class.items())
        },
    }


def format_report_table(report: MetricReport) -> str:
    lines = [f"{'class':>5}  {'tp':>5} {'fp':>5} {'fn':>5}  {'P':>6} {'R':>6} {'F1':>6}"]
    for c, s in sorted(report.per_class.items()):
        marker = "" if s.active else "  (inactive)"
        lines.append(
            f"{c:>5}  {s.tp:>5} {s.fp:>5} {s.fn:>5}  "
            f"{s.precision:>6.3f} {s.recall:>6.3f} {s.f1:>6.3f}{marker}"
        )
    return "\n".join(lines)


def print_report(report: MetricReport, title: str = "Evaluation") -> None:
    """Pretty-print a collar F1 report."""
    print(f"\n=== {title} ===\n")
    print(format_report_table(report))
    print(f"\nMacro collar F1: {100 * report.macro_f1:.2f}% "
          f"over {len(report.active_classes)} active classes")


def write_report_json(
    report: MetricReport, filepath: Path | str, extra: dict | None = None
) -> None:
    payload = {**(extra or {}), **report_to_dict(report)}
    try:
        Path(filepath).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise DataError(f"Failed to write report to '{filepath}': {e}") from e


def print_ablation_table(table: pd.DataFrame, grid: str) -> None:
    """Mean ± std of test collar F1 per cell, in percentage points."""
    print(f"\n=== Ablation: {grid} ===\n")
    if table.empty:
        print("(no runs)")
        return
    width = max(len("cell"), *(len(str(c)) for c in table["cell"]))
    print(f"{'cell':<{width}}  {'seeds':>5}  {'collar F1 (%)':>16}")
    for row in table.itertuples(index=False):
        print(
            f"{row.cell:<{width}}  {row.n_seeds:>5}  "
            f"{100 * row.f1_mean:>7.2f} ± {100 * row.f1_std:<6.2f}"
        )


def export_ablation_to_csv(table: pd.DataFrame, filepath: Path | str) -> None:
    """Export an aggregated ablation table to CSV."""
    try:
        with open(filepath, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["cell", "n_seeds", "f1_mean_pct", "f1_std_pct"])
            for row in table.itertuples(index=False):
                writer.writerow(
                    [row.cell, row.n_seeds, f"{100 * row.f1_mean:.2f}", f"{100 * row.f1_std:.2f}"]
                )
    except OSError as e:
        raise DataError(f"Failed to write results to '{filepath}': {e}") from e


def write_jsonl(records: Iterable[dict], filepath: Path | str) -> int:
    """Write one JSON object per line; returns the number of records."""
    count = 0
    try:
        with open(filepath, "w") as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
                count += 1
    except OSError as e:
        raise DataError(f"Failed to write '{filepath}': {e}") from e
    return count
