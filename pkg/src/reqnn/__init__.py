"""Rotation-equivariant quaternion networks for 3D point clouds."""

from .errors import (CloudParseError, DegenerateFrameError, InvalidArgumentError, ReqnnError, ShapeMismatchError,
                     SpecError, TapeError)
from .quat import Quaternion, QTensor
from .rotations import Rotor, random_rotor, rotate, rotor_from_axis_angle

__version__ = "0.1.0"

__all__ = [
    "CloudParseError", "DegenerateFrameError", "InvalidArgumentError", "QTensor", "Quaternion", "ReqnnError",
    "Rotor", "ShapeMismatchError", "SpecError", "TapeError", "random_rotor", "rotate", "rotor_from_axis_angle",
]
