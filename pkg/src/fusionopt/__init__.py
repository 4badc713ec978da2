"""Subset selection for D-optimal data fusion."""

__version__ = "0.1.0"
