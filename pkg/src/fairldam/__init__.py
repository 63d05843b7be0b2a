"""Margin-based imbalanced learning with group-fairness extensions."""

__version__ = "0.1.0"
