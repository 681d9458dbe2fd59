"""Training run UI component."""

from pathlib import Path

import pandas as pd
import streamlit as st

from src.app.utils.analytics import loss_long_frame, summarize_run
from src.app.utils.visualizations import (
    create_loss_curves,
    create_schedule_chart,
    create_val_f1_chart,
)


def render_training_dashboard(log_df: pd.DataFrame, log_path: Path) -> None:
    """Summary metrics, loss curves, schedule and validation F1 of one run."""
    st.header("📈 Training Run")
    st.caption(str(log_path))

    if log_df.empty:
        st.warning("The training log is empty.")
        return

    summary = summarize_run(log_df)
    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Epochs", summary["epochs"])
    with col2:
        best = summary["best_val_f1"]
        st.metric("Best Val Collar F1", "n/a" if best is None else f"{100 * best:.2f}%")
        if summary["best_epoch"] is not None:
            st.caption(f"at epoch {summary['best_epoch']}")
    with col3:
        st.metric("Final Supervised Loss", f"{summary['final_loss_super']:.4f}")

    tab_loss, tab_schedule, tab_val, tab_raw = st.tabs(
        ["Losses", "Schedule", "Validation", "Raw Log"]
    )
    with tab_loss:
        st.plotly_chart(create_loss_curves(loss_long_frame(log_df)), use_container_width=True)
    with tab_schedule:
        st.plotly_chart(create_schedule_chart(log_df), use_container_width=True)
    with tab_val:
        if log_df["val_collar_f1"].notna().any():
            st.plotly_chart(create_val_f1_chart(log_df), use_container_width=True)
        else:
            st.info("No validation split was available for this run.")
    with tab_raw:
        st.dataframe(log_df, use_container_width=True, hide_index=True)
