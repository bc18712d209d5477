"""Structural analysis and index reduction by embedding for nonlinear DAEs."""

from .errors import DaeError
from .model_io import DaeSystem, Point, Trajectory, load_model, parse_model

__all__ = ["DaeError", "DaeSystem", "Point", "Trajectory", "load_model",
           "parse_model"]
__version__ = "0.1.0"
