"""CLI entry point for the Streamlit dashboard."""

import sys
from pathlib import Path


def main() -> None:
    """Launch the dashboard; extra arguments are passed through to `streamlit run`."""
    from streamlit.web.cli import main as st_main

    app_path = Path(__file__).parent / "streamlit.py"
    sys.argv = ["streamlit", "run", str(app_path), "--server.headless", "true", *sys.argv[1:]]
    st_main()


if __name__ == "__main__":
    main()
