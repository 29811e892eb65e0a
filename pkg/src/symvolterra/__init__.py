"""Symmetric truncated-Volterra forecasting of chaotic time series, with a
leaky echo state network baseline."""

__version__ = "0.1.0"
