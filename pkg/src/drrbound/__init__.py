"""Worst-case delay bounds for DRR-scheduled time-sensitive networks."""

__version__ = "0.1.0"
