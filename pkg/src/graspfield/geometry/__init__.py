"""Meshes, occupancy grids, signed distance fields and frame transforms."""
from .mesh import PRIMITIVE_KINDS, TopologyError, TriMesh, make_primitive, read_obj, write_obj
from .sdf import SignedDistanceField, build_sdf, sample_sdf
from .transforms import (
    RigidTransform,
    augmentation_rotations,
    compose_to_sdf_frame,
    make_t_sdf,
    sdf_frame_linear,
)
from .voxel import OccupancyGrid, points_inside, voxelize

__all__ = [
    "PRIMITIVE_KINDS",
    "OccupancyGrid",
    "RigidTransform",
    "SignedDistanceField",
    "TopologyError",
    "TriMesh",
    "augmentation_rotations",
    "build_sdf",
    "compose_to_sdf_frame",
    "make_primitive",
    "make_t_sdf",
    "points_inside",
    "read_obj",
    "sample_sdf",
    "sdf_frame_linear",
    "voxelize",
    "write_obj",
]
