"""Ablation table UI component."""

import pandas as pd
import streamlit as st

from src.app.utils.analytics import ablation_csv
from src.app.utils.visualizations import create_ablation_chart


def render_ablation_dashboard(table: pd.DataFrame, grid: str) -> None:
    st.header(f"🧪 Ablation: {grid}")

    if table.empty:
        st.warning("No run.json files found for this grid.")
        return

    best = table.loc[table["f1_mean"].idxmax()]
    col1, col2 = st.columns(2)
    with col1:
        st.metric("Cells", len(table))
    with col2:
        st.metric("Best Cell", str(best["cell"]))
        st.caption(f"{100 * best['f1_mean']:.2f} ± {100 * best['f1_std']:.2f}% collar F1")

    st.plotly_chart(create_ablation_chart(table, grid), use_container_width=True)

    display = table.assign(
        f1_mean=(100 * table["f1_mean"]).round(2), f1_std=(100 * table["f1_std"]).round(2)
    )
    st.dataframe(display, use_container_width=True, hide_index=True)
    st.download_button(
        "Download CSV", ablation_csv(table), file_name=f"{grid}_results.csv", mime="text/csv"
    )
