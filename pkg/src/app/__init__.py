"""Streamlit dashboard for sed-toolkit runs."""
