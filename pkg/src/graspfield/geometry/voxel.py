"""Ray-parity inside tests and occupancy grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .mesh import TriMesh
from .transforms import apply_affine, make_t_sdf


def points_inside(mesh: TriMesh, points, eps=1e-10):
    """Boolean mask of points strictly inside a closed mesh (ray parity)."""
    c = np.ascontiguousarray(mesh.corners)
    v0 = np.ascontiguousarray(c[:, 0])
    e1 = np.ascontiguousarray(c[:, 1] - c[:, 0])
    e2 = np.ascontiguousarray(c[:, 2] - c[:, 0])
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    return _kernels.inside_mask(pts, v0, e1, e2, _kernels.RAY_DIRECTIONS, eps)


def cell_centers(resolution):
    """Cell-center coordinates in the unit cube, shape ``(R, R, R, 3)`` indexed [x, y, z]."""
    c = (np.arange(resolution) + 0.5) / resolution
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean cells indexed ``[x, y, z]`` plus the object-to-unit-cube map."""

    resolution: int
    cells: np.ndarray
    object_to_grid: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=bool)
        if cells.shape != (self.resolution,) * 3:
            raise ValueError(f"cells shape {cells.shape} does not match resolution {self.resolution}")
        if not cells.any():
            raise ValueError("occupancy grid has no occupied cell")
        cells.setflags(write=False)
        m = np.array(self.object_to_grid, dtype=float).reshape(4, 4)
        m.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "object_to_grid", m)

    def as_array(self):
        return self.cells.astype(float)

    def to_rle(self):
        """Run-length encoding ``"<first bit>:<run>,<run>,..."`` in x-fastest order."""
        flat = self.cells.ravel(order="F").astype(np.int8)
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        runs = np.diff(bounds)
        return f"{int(flat[0])}:" + ",".join(str(int(r)) for r in runs)

    @classmethod
    def from_rle(cls, resolution, rle, object_to_grid):
        first, runs = rle.split(":")
        runs = [int(r) for r in runs.split(",")]
        bit = int(first)
        chunks = []
        for r in runs:
            chunks.append(np.full(r, bit, dtype=bool))
            bit ^= 1
        flat = np.concatenate(chunks)
        if flat.size != resolution ** 3:
            raise ValueError("run lengths do not cover the grid")
        return cls(resolution, flat.reshape((resolution,) * 3, order="F"), object_to_grid)


def voxelize(mesh: TriMesh, resolution: int) -> OccupancyGrid:
    """Occupy every cell whose center lies inside the mesh.

    The mesh bounding box is mapped into the unit cube with scale ``0.95/L``
    and centered at 0.5, the same placement used for signed distance fields.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    mesh.require_closed()
    to_grid = make_t_sdf(*mesh.bounds())
    from_grid = np.linalg.inv(to_grid)
    centers = cell_centers(resolution).reshape(-1, 3)
    inside = points_inside(mesh, apply_affine(from_grid, centers)).reshape((resolution,) * 3)
    if not inside.any():
        # degenerate floor: the cell holding the bounding-box center
        mid = min(int(0.5 * resolution), resolution - 1)
        inside[mid, mid, mid] = True
    return OccupancyGrid(resolution, inside, to_grid)
