"""Rectification + attention scene-text recognizer on a from-scratch tensor engine."""

from .backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
