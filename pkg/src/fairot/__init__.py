"""Conditional demographic disparity measured with optimal transport."""

__version__ = "0.1.0"
