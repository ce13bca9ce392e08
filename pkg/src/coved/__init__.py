"""Hierarchical and collaborative variational dialogue models on a numpy autodiff engine."""

__version__ = "0.1.0"
