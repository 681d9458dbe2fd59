"""UI component modules for the Streamlit app."""
