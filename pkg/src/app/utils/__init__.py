"""Utility modules for the Streamlit app."""
