"""Scope-filtered dual-graph aspect sentiment models on a small autodiff core."""

__version__ = "0.1.0"
