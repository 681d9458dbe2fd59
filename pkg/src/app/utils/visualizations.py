"""Visualization functions for creating Plotly charts."""

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
import streamlit as st
from plotly.subplots import make_subplots


@st.cache_data
def create_loss_curves(long_df: pd.DataFrame) -> go.Figure:
    """Mean per-epoch supervised, MeanTeacher and consistency losses."""
    fig = px.line(long_df, x="epoch", y="value", color="loss", markers=True)
    fig.update_layout(title="Training Losses", yaxis_title="loss")
    return fig


@st.cache_data
def create_schedule_chart(log_df: pd.DataFrame) -> go.Figure:
    """Learning rate (left axis) and unsupervised ramp-up weight (right axis)."""
    fig = make_subplots(specs=[[{"secondary_y": True}]])
    fig.add_trace(go.Scatter(x=log_df["epoch"], y=log_df["lr"], name="lr"), secondary_y=False)
    fig.add_trace(
        go.Scatter(x=log_df["epoch"], y=log_df["ramp"], name="ramp", line=dict(dash="dot")),
        secondary_y=True,
    )
    fig.update_yaxes(title_text="learning rate", secondary_y=False)
    fig.update_yaxes(title_text="ramp-up", range=[0, 1.05], secondary_y=True)
    fig.update_layout(title="Schedule", xaxis_title="epoch")
    return fig


@st.cache_data
def create_val_f1_chart(log_df: pd.DataFrame) -> go.Figure:
    val = log_df.dropna(subset=["val_collar_f1"])
    fig = px.line(val, x="epoch", y=val["val_collar_f1"] * 100, markers=True)
    fig.update_layout(title="Validation Collar F1", yaxis_title="F1 (%)")
    return fig


@st.cache_data
def create_ablation_chart(table: pd.DataFrame, grid: str) -> go.Figure:
    """Mean test collar F1 per cell with ±1 std error bars."""
    fig = px.bar(
        table,
        x="cell",
        y=table["f1_mean"] * 100,
        error_y=table["f1_std"] * 100,
        hover_data=["n_seeds"],
    )
    fig.update_layout(title=f"Ablation: {grid}", yaxis_title="collar F1 (%)", xaxis_title="")
    return fig
