"""Streaming Gaussian reconstruction driven by flow-bound 3D control points."""

from .camera import CameraModel, RayFrame
from .cloud import GaussianCloud
from .control_points import ControlPoint
from .errors import CPStreamError
from .streaming import GoSModel, ResidualSet

__all__ = [
    "CameraModel",
    "ControlPoint",
    "CPStreamError",
    "GaussianCloud",
    "GoSModel",
    "RayFrame",
    "ResidualSet",
]
__version__ = "0.1.0"
