"""Emotion-gradient driven self-improving agent on a toy classification stream."""

from .config import RunConfig, load
from .runner import COLUMNS, RunResult, run, write_trace

__all__ = ["RunConfig", "load", "COLUMNS", "RunResult", "run", "write_trace"]
__version__ = "0.1.0"
