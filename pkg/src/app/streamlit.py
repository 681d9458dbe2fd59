"""Streamlit dashboard for training runs and ablation grids."""

from pathlib import Path

import streamlit as st

from src.ablation import GRIDS
from src.app.components.ablation import render_ablation_dashboard
from src.app.components.training import render_training_dashboard
from src.app.utils.analytics import (
    find_training_logs,
    is_ablation_dir,
    load_ablation,
    load_training_log,
)


def main():
    st.set_page_config(page_title="SED Toolkit Dashboard", page_icon="🔊", layout="wide")

    st.title("🔊 Semi-Supervised SED Dashboard")
    st.markdown("Inspect training logs and ablation tables written by `sed-toolkit`.")

    root = Path(st.sidebar.text_input("Run or ablation directory", value="runs"))
    if not root.is_dir():
        st.info("Enter a directory written by `sed-toolkit train` or `sed-toolkit ablate`.")
        return

    if is_ablation_dir(root):
        grid = st.sidebar.selectbox("Grid", ["(all)", *GRIDS])
        table = load_ablation(root, None if grid == "(all)" else grid)
        render_ablation_dashboard(table, grid)

    logs = find_training_logs(root)
    if not logs:
        st.info("No training logs found below this directory.")
        return

    choice = st.sidebar.selectbox(
        "Training log", logs, format_func=lambda p: str(p.relative_to(root))
    )
    try:
        log_df = load_training_log(choice)
    except ValueError as e:
        st.error(f"Error loading log: {e}")
        return
    render_training_dashboard(log_df, choice)


if __name__ == "__main__":
    main()
