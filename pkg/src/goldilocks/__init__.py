"""Goldilocks flood-window impact evaluation on gridded EO-style time series."""

__version__ = "0.1.0"
