"""Signed distance fields on the unit cube.

Nodes sit at ``i / (R - 1)`` along each axis, so a cell has edge
``h = 1 / (R - 1)`` in cube units. Values are in cube units, positive outside
the object and negative inside.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .mesh import TriMesh
from .transforms import apply_affine, make_t_sdf
from .voxel import points_inside

MAGIC = b"GFLDSDF1".ljust(16, b"\0")
SWEEP_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class SignedDistanceField:
    resolution: int
    values: np.ndarray
    t_sdf: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.resolution,) * 3:
            raise ValueError(f"values shape {v.shape} does not match resolution {self.resolution}")
        m = np.array(self.t_sdf, dtype=float).reshape(4, 4)
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "t_sdf", m)

    @property
    def scale_s(self):
        return float(self.t_sdf[0, 0])

    @property
    def cell(self):
        return 1.0 / (self.resolution - 1)

    @property
    def cell_diagonal(self):
        return np.sqrt(3.0) * self.cell

    @property
    def center(self):
        """The object frame origin expressed in the cube."""
        return self.t_sdf[:3, 3].copy()

    @cached_property
    def bounding_radius(self):
        """Largest distance from :attr:`center` to a node at or inside the surface."""
        inside = np.argwhere(self.values <= 0.0) * self.cell
        if len(inside) == 0:
            return self.cell
        return float(np.max(np.linalg.norm(inside - self.center, axis=1)) + self.cell)

    def sample(self, points):
        return sample_sdf(self, points)

    def node_positions(self):
        g = np.arange(self.resolution) * self.cell
        return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", self.resolution))
            fh.write(self.values.ravel(order="F").astype("<f4").tobytes())
            fh.write(self.t_sdf.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        data = Path(path).read_bytes()
        if data[:16] != MAGIC:
            raise ValueError(f"{path}: not a signed distance field file")
        (res,) = struct.unpack("<I", data[16:20])
        n = res ** 3
        end = 20 + 4 * n
        if len(data) != end + 128:
            raise ValueError(f"{path}: truncated or oversized file")
        values = np.frombuffer(data[20:end], dtype="<f4").astype(float).reshape((res,) * 3, order="F")
        t_sdf = np.frombuffer(data[end:], dtype="<f8").reshape(4, 4)
        return cls(res, values, t_sdf)


def build_sdf(mesh: TriMesh, resolution: int = 32) -> SignedDistanceField:
    """Signed distance field of a closed mesh by exact band + fast sweeping."""
    if resolution < 4:
        raise ValueError("resolution must be at least 4")
    mesh.require_closed()
    t_sdf = make_t_sdf(*mesh.bounds())
    h = 1.0 / (resolution - 1)
    corners = np.ascontiguousarray(apply_affine(t_sdf, mesh.vertices)[mesh.triangles])
    u = _kernels.narrow_band(corners, resolution, h, 2.0 * h)
    frozen = np.isfinite(u)
    _kernels.fast_sweep(u, frozen, h, SWEEP_TOL, 1000)

    g = np.arange(resolution) * h
    nodes = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    # inside test in the object frame keeps the parity tolerance in meters
    inside = points_inside(mesh, apply_affine(np.linalg.inv(t_sdf), nodes)).reshape(u.shape)
    return SignedDistanceField(resolution, np.where(inside, -u, u), t_sdf)


def _trilinear(values, g):
    """Value and gradient (in index units) of the trilinear interpolant at index coords ``g``."""
    n = values.shape[0]
    i0 = np.clip(np.floor(g).astype(np.int64), 0, n - 2)
    f = g - i0
    x, y, z = f[:, 0], f[:, 1], f[:, 2]
    i, j, k = i0[:, 0], i0[:, 1], i0[:, 2]
    c000 = values[i, j, k]
    c100 = values[i + 1, j, k]
    c010 = values[i, j + 1, k]
    c110 = values[i + 1, j + 1, k]
    c001 = values[i, j, k + 1]
    c101 = values[i + 1, j, k + 1]
    c011 = values[i, j + 1, k + 1]
    c111 = values[i + 1, j + 1, k + 1]
    c00 = c000 + (c100 - c000) * x
    c10 = c010 + (c110 - c010) * x
    c01 = c001 + (c101 - c001) * x
    c11 = c011 + (c111 - c011) * x
    c0 = c00 + (c10 - c00) * y
    c1 = c01 + (c11 - c01) * y
    val = c0 + (c1 - c0) * z

    dx0 = (c100 - c000) + ((c110 - c010) - (c100 - c000)) * y
    dx1 = (c101 - c001) + ((c111 - c011) - (c101 - c001)) * y
    dx = dx0 + (dx1 - dx0) * z
    dy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * z
    dz = c1 - c0
    return val, np.stack([dx, dy, dz], axis=1)


def sample_sdf(field: SignedDistanceField, points):
    """Trilinear value and analytic gradient at points in the cube frame.

    Points outside ``[0, 1]^3`` get the value at the nearest cube point plus
    the distance to the cube, so they are always positive.

    Returns ``(values, gradients)`` with shapes ``(n,)`` and ``(n, 3)``, or a
    scalar and a 3-vector for a single point.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    clamped = np.clip(pts, 0.0, 1.0)
    scale = field.resolution - 1
    val, grad = _trilinear(field.values, clamped * scale)
    grad = grad * scale

    offset = pts - clamped
    dist = np.linalg.norm(offset, axis=1)
    outside = dist > 0.0
    if outside.any():
        free = (offset == 0.0)[outside]
        val = val.copy()
        val[outside] += dist[outside]
        grad[outside] = grad[outside] * free + offset[outside] / dist[outside, None]
    if single:
        return float(val[0]), grad[0]
    return val, grad
