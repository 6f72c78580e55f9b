"""Kernel-based conditional independence testing for random functions."""

__version__ = "0.1.0"

from funcci.ccco import TestResult, run_test  # noqa: E402
from funcci.config import PipelineConfig  # noqa: E402
from funcci.dataset import TripleDataset, ingest  # noqa: E402
from funcci.smoothing import FunctionalSample  # noqa: E402

__all__ = ["FunctionalSample", "PipelineConfig", "TestResult", "TripleDataset", "ingest", "run_test"]
