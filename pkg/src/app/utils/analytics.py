"""Data helpers for the dashboard: training logs and ablation tables as DataFrames."""

from pathlib import Path

import pandas as pd
import streamlit as st

from src.ablation import LOG_FILE, RUN_FILE, aggregate_directory

LOSS_COLUMNS = ["loss_super", "loss_unsuper", "loss_cr"]
TRAIN_LOG_NAMES = ("train.jsonl", LOG_FILE)


def find_training_logs(root: Path | str) -> list[Path]:
    """Every training log below `root`, sorted by path."""
    root = Path(root)
    found = [p for name in TRAIN_LOG_NAMES for p in root.rglob(name)]
    return sorted(found)


def is_ablation_dir(root: Path | str) -> bool:
    return any(Path(root).rglob(RUN_FILE))


@st.cache_data
def load_training_log(path: Path | str) -> pd.DataFrame:
    """One row per epoch; an empty log gives an empty frame with the expected columns."""
    text = Path(path).read_text()
    if not text.strip():
        return pd.DataFrame(columns=["epoch", "lr", "ramp", *LOSS_COLUMNS, "val_collar_f1"])
    df = pd.read_json(path, lines=True)
    return df.sort_values("epoch").reset_index(drop=True)


def loss_long_frame(log_df: pd.DataFrame) -> pd.DataFrame:
    """Epoch / loss / value rows for the loss curve chart."""
    return log_df.melt(
        id_vars="epoch", value_vars=LOSS_COLUMNS, var_name="loss", value_name="value"
    )


def summarize_run(log_df: pd.DataFrame) -> dict:
    if log_df.empty:
        return {"epochs": 0, "best_val_f1": None, "best_epoch": None, "final_loss_super": None}
    val = log_df["val_collar_f1"].dropna()
    best = None if val.empty else int(log_df.loc[val.idxmax(), "epoch"])
    return {
        "epochs": len(log_df),
        "best_val_f1": None if val.empty else float(val.max()),
        "best_epoch": best,
        "final_loss_super": float(log_df["loss_super"].iloc[-1]),
    }


@st.cache_data
def load_ablation(root: Path | str, grid: str | None = None) -> pd.DataFrame:
    """Aggregated mean ± std table re-read from the run.json files below `root`."""
    return aggregate_directory(root, grid)


def ablation_csv(table: pd.DataFrame) -> str:
    """Percent-scaled CSV for the download button."""
    out = table.copy()
    out["f1_mean"] = (100 * out["f1_mean"]).round(2)
    out["f1_std"] = (100 * out["f1_std"]).round(2)
    return out.to_csv(index=False)
