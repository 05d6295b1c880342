"""Discrete spatio-temporal self-exciting count models with low-tubal-rank
excitation kernels: simulation, penalized estimation, and recovery bounds."""

from .errors import NumericalError

__version__ = "0.1.0"

__all__ = ["NumericalError", "__version__"]
