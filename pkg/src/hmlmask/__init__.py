"""Hierarchical multi-label classification with masked missing information."""

__version__ = "0.1.0"
