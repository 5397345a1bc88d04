"""Scene-level 6-DoF object pose estimation from depth images."""

from .geometry import (
    CameraModel,
    PointCloud,
    RigidTransform,
    SymmetryGroup,
    symmetric_rotation_distance,
)
from .meshes import TriangleMesh, load_obj, make_primitive, save_obj

__all__ = [
    "CameraModel",
    "PointCloud",
    "RigidTransform",
    "SymmetryGroup",
    "TriangleMesh",
    "load_obj",
    "make_primitive",
    "save_obj",
    "symmetric_rotation_distance",
]

__version__ = "0.1.0"
