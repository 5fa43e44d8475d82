"""Table-grounded long-context QA data pipeline."""

__version__ = "0.1.0"
