"""Periodic dividend barriers with capital injection for spectrally negative Lévy surplus models."""

from .levy_model import LevyModel, ModelError, laplace_exponent, mean_drift, path_class, phi
from .piecewise import PayoffFn, PiecewiseLinear
from .scale_fn import ScaleContext

__version__ = "0.1.0"

__all__ = [
    "LevyModel",
    "ModelError",
    "PayoffFn",
    "PiecewiseLinear",
    "ScaleContext",
    "laplace_exponent",
    "mean_drift",
    "path_class",
    "phi",
]
