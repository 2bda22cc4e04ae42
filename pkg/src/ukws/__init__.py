"""Metric-learning toolkit for user-defined keyword spotting."""

__version__ = "0.1.0"
