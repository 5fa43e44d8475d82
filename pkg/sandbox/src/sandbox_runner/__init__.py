"""Isolated one-shot runner for table solution scripts."""

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_TIMEOUT = 10
EXIT_CRASH = 11
EXIT_MISSING_ANSWER = 12
