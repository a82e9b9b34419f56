"""Triangle meshes, procedural primitives and ASCII OBJ I/O."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TopologyError(ValueError):
    """Raised when a mesh is not a closed 2-manifold where one is required."""


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    @property
    def corners(self):
        """``(m, 3, 3)`` array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def triangle_areas(self):
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def edge_counts(self):
        f = self.triangles
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        return Counter(map(tuple, e.tolist()))

    def is_closed(self):
        counts = self.edge_counts()
        return len(counts) > 0 and all(c == 2 for c in counts.values())

    def euler_characteristic(self):
        return len(self.vertices) - len(self.edge_counts()) + len(self.triangles)

    def volume(self):
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def center_of_mass(self):
        c = self.corners
        vol = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])) / 6.0
        centroids = c.sum(axis=1) / 4.0
        return (vol[:, None] * centroids).sum(axis=0) / vol.sum()

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def require_closed(self):
        if not self.is_closed():
            raise TopologyError("mesh is not closed: every edge must be shared by exactly two triangles")
        if np.any(self.triangle_areas() <= 1e-12):
            raise TopologyError("mesh has degenerate triangles")

    def transformed(self, transform):
        """Apply a ``RigidTransform`` (or anything with ``.apply``)."""
        return TriMesh(transform.apply(self.vertices), self.triangles)

    def translated(self, offset):
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)


def _icosphere(subdivisions):
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), np.array(faces, dtype=np.int64)


def _star_mesh(radius_fn, subdivisions=3):
    """Mesh a star-shaped solid by pushing icosphere directions out to ``radius_fn``."""
    dirs, faces = _icosphere(subdivisions)
    r = radius_fn(dirs)
    return dirs * r[:, None], faces


def _capsule_radius(radius, length):
    half = 0.5 * length

    def fn(d):
        rho = np.hypot(d[:, 0], d[:, 1])
        dz = np.abs(d[:, 2])
        with np.errstate(divide="ignore"):
            r_side = np.where(rho > 0, radius / np.where(rho > 0, rho, 1.0), np.inf)
        on_side = r_side * dz <= half
        disc = (2 * half * dz) ** 2 - 4 * (half * half - radius * radius)
        r_cap = (2 * half * dz + np.sqrt(np.maximum(disc, 0.0))) / 2.0
        return np.where(on_side, r_side, r_cap)

    return fn


def _superquadric_radius(a, b, c, e1, e2):
    def fn(d):
        x, y, z = np.abs(d[:, 0]), np.abs(d[:, 1]), np.abs(d[:, 2])
        f = ((x / a) ** (2 / e2) + (y / b) ** (2 / e2)) ** (e2 / e1) + (z / c) ** (2 / e1)
        return f ** (-e1 / 2.0)

    return fn


def _box(wx, wy, wz):
    hx, hy, hz = 0.5 * wx, 0.5 * wy, 0.5 * wz
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    # vertex index = 4*ix + 2*iy + iz
    f = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    return v, np.array(f, dtype=np.int64)


def _cylinder(radius, height, segments):
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = 0.5 * height
    bottom = np.column_stack([ring, np.full(segments, -h)])
    top = np.column_stack([ring, np.full(segments, h)])
    v = np.vstack([bottom, top, [[0, 0, -h], [0, 0, h]]])
    cb, ct = 2 * segments, 2 * segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f.append((i, j, segments + j))
        f.append((i, segments + j, segments + i))
        f.append((cb, j, i))
        f.append((ct, segments + i, segments + j))
    return v, np.array(f, dtype=np.int64)


PRIMITIVE_KINDS = ("sphere", "box", "cylinder", "capsule", "ellipsoid", "superquadric")


def make_primitive(kind, **params):
    """Build a closed, outward-oriented primitive centered at its center of mass.

    Parameters by kind (meters): ``sphere(radius)``, ``box(wx, wy, wz)``,
    ``cylinder(radius, height, segments=32)``, ``capsule(radius, length)``,
    ``ellipsoid(a, b, c)``, ``superquadric(a, b, c, e1, e2)``. The smooth kinds
    accept ``subdivisions`` (icosphere level, default 3).
    """
    if kind not in PRIMITIVE_KINDS:
        raise ValueError(f"unknown primitive kind {kind!r}")
    subdiv = int(params.pop("subdivisions", 3))
    segments = int(params.pop("segments", 32))
    for name, value in params.items():
        if not np.isfinite(value) or value <= 0:
            raise ValueError(f"invalid parameter {name}={value!r}: dimensions must be positive")

    if kind == "sphere":
        r = params["radius"]
        v, f = _star_mesh(lambda d: np.full(len(d), r), subdiv)
    elif kind == "ellipsoid":
        a, b, c = params["a"], params["b"], params["c"]
        v, f = _star_mesh(lambda d: 1.0 / np.sqrt((d[:, 0] / a) ** 2 + (d[:, 1] / b) ** 2 + (d[:, 2] / c) ** 2), subdiv)
    elif kind == "capsule":
        v, f = _star_mesh(_capsule_radius(params["radius"], params["length"]), subdiv)
    elif kind == "superquadric":
        v, f = _star_mesh(
            _superquadric_radius(params["a"], params["b"], params["c"], params["e1"], params["e2"]), subdiv
        )
    elif kind == "box":
        v, f = _box(params["wx"], params["wy"], params["wz"])
    else:
        if segments < 3:
            raise ValueError("cylinder needs at least 3 segments")
        v, f = _cylinder(params["radius"], params["height"], segments)

    mesh = TriMesh(v, f)
    if mesh.volume() < 0:
        mesh = TriMesh(v, f[:, ::-1])
    if kind != "sphere":
        # the sphere stays exact; every primitive here is point-symmetric anyway
        mesh = mesh.translated(-mesh.center_of_mass())
    return mesh


def write_obj(mesh: TriMesh, path):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise ValueError(f"{path}:{lineno}: only triangular faces are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
