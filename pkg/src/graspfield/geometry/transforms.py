"""Quaternion helpers, rigid transforms and the object-to-SDF frame chain.

Quaternions are stored scalar-first, ``(w, x, y, z)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def quat_canonical(q):
    """Return ``q`` (or a batch of them) with a non-negative scalar part."""
    q = np.asarray(q, dtype=float)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion; works on ``(..., 4)`` batches."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Canonical (w >= 0) unit quaternion of a single rotation matrix."""
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(np.array(q)))


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def rotvec_quat(v):
    """Quaternion of a rotation vector (batched); exact at zero."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 as a -> 0
    scale = np.where(angle > 1e-12, np.sin(half) / np.where(angle > 1e-12, angle, 1.0), 0.5)
    return np.concatenate([np.cos(half), scale * v], axis=-1)


def rotation_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: ``p -> R(rotation) p + translation``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        q = np.array(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("rotation quaternion must be finite and non-zero")
        # already-unit input is kept bit-exact so serialization round-trips
        q = quat_canonical(q if abs(n - 1.0) <= 1e-12 else q / n)
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @classmethod
    def from_rotation_matrix(cls, r, translation=(0.0, 0.0, 0.0)):
        return cls(translation, matrix_to_quat(r))

    @property
    def rotation_matrix(self):
        return quat_to_matrix(self.rotation)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        q_inv = quat_conj(self.rotation)
        return RigidTransform(-quat_to_matrix(q_inv) @ self.translation, q_inv)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation_matrix @ other.translation + self.translation,
            quat_mul(self.rotation, other.rotation),
        )

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation_matrix.T + self.translation

    def to_dict(self):
        return {"t": [float(v) for v in self.translation], "q": [float(v) for v in self.rotation]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["t"], d["q"])


def make_t_sdf(bbox_min, bbox_max):
    """Similarity transform placing a bounding box inside the unit cube.

    Scale is ``0.95 / L`` with ``L`` the longest box side; the box center lands
    on ``(0.5, 0.5, 0.5)``.
    """
    bbox_min = np.asarray(bbox_min, dtype=float)
    bbox_max = np.asarray(bbox_max, dtype=float)
    extent = float(np.max(bbox_max - bbox_min))
    if extent <= 0.0:
        raise ValueError("degenerate bounding box")
    s = 0.95 / extent
    center = 0.5 * (bbox_min + bbox_max)
    m = np.eye(4)
    m[:3, :3] *= s
    m[:3, 3] = 0.5 - s * center
    return m


def apply_affine(m, points):
    m = np.asarray(m, dtype=float)
    points = np.asarray(points, dtype=float)
    return points @ m[:3, :3].T + m[:3, 3]


def compose_to_sdf_frame(t_sdf, t_r: RigidTransform, global_point):
    """Map global points into the SDF cube: ``T_sdf . T_r^-1 . p``.

    ``global_point`` may be a single point or an ``(n, 3)`` array.
    """
    local = t_r.inverse().apply(global_point)
    return apply_affine(t_sdf, local)


def sdf_frame_linear(t_sdf, t_r: RigidTransform):
    """Linear part (3x3) and offset of the global-to-SDF map."""
    inv = t_r.inverse()
    a = np.asarray(t_sdf)[:3, :3] @ inv.rotation_matrix
    c = apply_affine(t_sdf, inv.translation)
    return a, c


def augmentation_rotations():
    """The 27 products ``Rz(g) Ry(b) Rx(a)`` for angles in {60, 120, 180} degrees.

    Ordered with ``a`` varying fastest, then ``b``, then ``g``.
    """
    angles = np.deg2rad([60.0, 120.0, 180.0])
    out = []
    for g in angles:
        for b in angles:
            for a in angles:
                r = rotation_z(g) @ rotation_y(b) @ rotation_x(a)
                out.append(RigidTransform.from_rotation_matrix(r))
    return out
