"""Stochastic and online Banach-Picard iterations with sub-Weibull error bounds."""

from .engine import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
