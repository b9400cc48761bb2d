"""Offline figures for experiment-sweep CSVs (cost vs step size or loss
parameter, grouped by sample count, with standard-error bands)."""

from .figures import plot_sweep, sweep_series
from .table import SchemaError, SweepTable, load_sweep_csv, parse_sweep_csv

__version__ = "0.1.0"
