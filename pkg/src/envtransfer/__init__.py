"""Relatedness metrics and transfer functions for performance models of
configurable systems measured in two environments."""

from .data import (
    AggregatedDataset,
    ConfigSpace,
    EnvironmentDesc,
    EnvPair,
    PerfDataset,
    aggregate,
    load_dataset,
    make_pair,
)
from .errors import DataError, DegenerateError, SpecError, UsageError

__version__ = "0.1.0"
