"""Articulated gripper models, forward kinematics and contact-point Jacobians.

A pose vector is laid out as ``(tx, ty, tz, qw, qx, qy, qz, theta_1..theta_J)``.
The wrist quaternion does not need to be unit length; it is normalized inside
forward kinematics and the Jacobian accounts for that normalization.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .geometry.transforms import RigidTransform, quat_canonical, quat_to_matrix

BUILTIN_GRIPPERS = ("simple9", "wide24")


class GripperFormatError(ValueError):
    """Malformed or inconsistent gripper description."""


@dataclass(frozen=True, eq=False)
class GripperModel:
    name: str
    link_names: tuple
    parents: np.ndarray          # parent link index, -1 for the root
    offset_rotations: np.ndarray  # (L, 3, 3)
    offset_translations: np.ndarray  # (L, 3)
    link_joint: np.ndarray       # joint index per link, -1 for the root
    axes: np.ndarray             # (J, 3), in the parent frame
    limits: np.ndarray           # (J, 2)
    contact_links: np.ndarray    # (P,)
    contact_offsets: np.ndarray  # (P, 3)
    joint_names: tuple = ()
    source: dict = field(default_factory=dict, repr=False)

    @property
    def n_joints(self):
        return len(self.axes)

    @property
    def n_contacts(self):
        return len(self.contact_links)

    @property
    def pose_dim(self):
        return 7 + self.n_joints

    def __post_init__(self):
        L = len(self.parents)
        J = self.n_joints
        # joints that move each link (ancestors including itself)
        moves = np.zeros((L, J), dtype=bool)
        for link in range(L):
            k = link
            while k >= 0:
                if self.link_joint[k] >= 0:
                    moves[link, self.link_joint[k]] = True
                k = self.parents[k]
        object.__setattr__(self, "_moves", moves)
        object.__setattr__(self, "contact_joint_mask", moves[self.contact_links])
        rest = np.zeros(self.pose_dim)
        rest[3] = 1.0
        object.__setattr__(self, "rest_points", forward_kinematics(self, rest))

    def clamp(self, joints):
        return np.clip(joints, self.limits[:, 0], self.limits[:, 1])

    def digest(self):
        blob = json.dumps(self.source, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class GraspPose:
    wrist: RigidTransform
    joints: np.ndarray
    clamped: bool = False

    @classmethod
    def from_vector(cls, vec, model: GripperModel):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (model.pose_dim,):
            raise ValueError(f"pose vector has length {vec.shape}, expected {model.pose_dim}")
        joints = model.clamp(vec[7:])
        return cls(RigidTransform(vec[:3], vec[3:7]), joints, bool(np.any(joints != vec[7:])))

    def to_vector(self):
        return np.concatenate([self.wrist.translation, self.wrist.rotation, self.joints])


@njit(cache=True)
def _link_frames_kernel(joints, parents, off_r, off_t, link_joint, axes):
    B = joints.shape[0]
    L = parents.shape[0]
    J = axes.shape[0]
    R = np.empty((B, L, 3, 3))
    t = np.empty((B, L, 3))
    w_axes = np.empty((B, J, 3))
    origins = np.empty((B, J, 3))
    rot = np.empty((3, 3))
    tmp = np.empty((3, 3))
    for b in range(B):
        for k in range(L):
            p = parents[k]
            if p < 0:
                R[b, k] = off_r[k]
                t[b, k] = off_t[k]
                continue
            for i in range(3):
                t[b, k, i] = t[b, p, i] + R[b, p, i, 0] * off_t[k, 0] + R[b, p, i, 1] * off_t[k, 1] + R[b, p, i, 2] * off_t[k, 2]
            jid = link_joint[k]
            if jid < 0:
                for i in range(3):
                    for j in range(3):
                        R[b, k, i, j] = R[b, p, i, 0] * off_r[k, 0, j] + R[b, p, i, 1] * off_r[k, 1, j] + R[b, p, i, 2] * off_r[k, 2, j]
                continue
            x, y, z = axes[jid, 0], axes[jid, 1], axes[jid, 2]
            th = joints[b, jid]
            c, s = np.cos(th), np.sin(th)
            C = 1.0 - c
            # Rodrigues
            rot[0, 0] = c + x * x * C
            rot[0, 1] = x * y * C - z * s
            rot[0, 2] = x * z * C + y * s
            rot[1, 0] = y * x * C + z * s
            rot[1, 1] = c + y * y * C
            rot[1, 2] = y * z * C - x * s
            rot[2, 0] = z * x * C - y * s
            rot[2, 1] = z * y * C + x * s
            rot[2, 2] = c + z * z * C
            for i in range(3):
                for j in range(3):
                    tmp[i, j] = R[b, p, i, 0] * rot[0, j] + R[b, p, i, 1] * rot[1, j] + R[b, p, i, 2] * rot[2, j]
            for i in range(3):
                for j in range(3):
                    R[b, k, i, j] = tmp[i, 0] * off_r[k, 0, j] + tmp[i, 1] * off_r[k, 1, j] + tmp[i, 2] * off_r[k, 2, j]
            for i in range(3):
                w_axes[b, jid, i] = R[b, p, i, 0] * x + R[b, p, i, 1] * y + R[b, p, i, 2] * z
                origins[b, jid, i] = t[b, k, i]
    return R, t, w_axes, origins


def _link_frames(model: GripperModel, joints):
    """Link frames in the wrist frame for a ``(B, J)`` batch of joint angles.

    A link's frame is ``parent * [Rot(axis, theta) R_offset | t_offset]``.
    Returns rotations ``(B, L, 3, 3)``, translations ``(B, L, 3)``, and each
    joint's axis and origin in the wrist frame, both ``(B, J, 3)``.
    """
    return _link_frames_kernel(
        np.ascontiguousarray(joints, dtype=float),
        model.parents,
        model.offset_rotations,
        model.offset_translations,
        model.link_joint,
        np.ascontiguousarray(model.axes.reshape(-1, 3)),
    )


def _wrist_frame_points(model, joints):
    R, t, axes, origins = _link_frames(model, joints)
    links = model.contact_links
    pts = np.einsum("bpij,pj->bpi", R[:, links], model.contact_offsets) + t[:, links]
    return pts, axes, origins


def forward_kinematics(model: GripperModel, pose):
    """Global contact-point positions for a pose vector or ``GraspPose``.

    Accepts a single pose (returns ``(P, 3)``) or a ``(B, 7+J)`` batch
    (returns ``(B, P, 3)``).
    """
    if isinstance(pose, GraspPose):
        pose = pose.to_vector()
    x = np.asarray(pose, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    q = quat_canonical(x[:, 3:7] / np.linalg.norm(x[:, 3:7], axis=1, keepdims=True))
    pts, _, _ = _wrist_frame_points(model, x[:, 7:])
    out = np.einsum("bij,bpj->bpi", quat_to_matrix(q), pts) + x[:, None, :3]
    return out[0] if single else out


def _dRv_dq(q, v):
    """Derivative of ``R(q) v`` w.r.t. a unit quaternion; ``(B, P, 3, 4)``."""
    w = q[:, 0][:, None]
    u = q[:, 1:][:, None, :]
    uv = np.einsum("bpi,bpi->bp", np.broadcast_to(u, v.shape), v)
    cross_uv = np.cross(np.broadcast_to(u, v.shape), v)
    out = np.empty(v.shape + (4,))
    out[..., 0] = 2.0 * w[..., None] * v + 2.0 * cross_uv
    eye = np.eye(3)
    # d/du [ (w^2 - u.u) v + 2 (u.v) u + 2 w u x v ]
    vx = np.zeros(v.shape + (3,))
    vx[..., 0, 1], vx[..., 0, 2] = -v[..., 2], v[..., 1]
    vx[..., 1, 0], vx[..., 1, 2] = v[..., 2], -v[..., 0]
    vx[..., 2, 0], vx[..., 2, 1] = -v[..., 1], v[..., 0]
    ub = np.broadcast_to(u, v.shape)
    du = (
        -2.0 * v[..., :, None] * ub[..., None, :]
        + 2.0 * uv[..., None, None] * eye
        + 2.0 * ub[..., :, None] * v[..., None, :]
        - 2.0 * w[..., None, None] * vx
    )
    out[..., 1:] = du
    return out


def fk_jacobian(model: GripperModel, pose):
    """Analytic ``d(point)/d(pose vector)`` for every contact point.

    Returns ``(P, 3, 7+J)`` for a single pose or ``(B, P, 3, 7+J)`` for a batch.
    Quaternion columns include the derivative of the normalization ``q/|q|``.
    """
    if isinstance(pose, GraspPose):
        pose = pose.to_vector()
    x = np.asarray(pose, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    B = x.shape[0]
    P, J = model.n_contacts, model.n_joints
    qraw = x[:, 3:7]
    norm = np.linalg.norm(qraw, axis=1)
    qn = qraw / norm[:, None]
    sign = np.where(qn[:, :1] < 0.0, -1.0, 1.0)
    qc = qn * sign
    pts, axes, origins = _wrist_frame_points(model, x[:, 7:])
    Rw = quat_to_matrix(qc)

    jac = np.zeros((B, P, 3, 7 + J))
    jac[:, :, 0, 0] = 1.0
    jac[:, :, 1, 1] = 1.0
    jac[:, :, 2, 2] = 1.0
    # chain: raw q -> normalized -> canonical sign flip -> R(q) v
    proj = (np.eye(4) - qn[:, :, None] * qn[:, None, :]) / norm[:, None, None]
    dq = _dRv_dq(qc, pts) * sign[:, None, None, :]
    jac[..., 3:7] = np.einsum("bpik,bkl->bpil", dq, proj)
    # revolute joints: axis x (point - joint origin), rotated into the world
    lever = pts[:, :, None, :] - origins[:, None, :, :]
    cols = np.cross(np.broadcast_to(axes[:, None], lever.shape), lever)
    cols = cols * model.contact_joint_mask[None, :, :, None]
    jac[..., 7:] = np.einsum("bij,bpkj->bpik", Rw, cols)
    return jac[0] if single else jac


def _parse_transform(d, where):
    try:
        t = np.asarray(d.get("t", [0.0, 0.0, 0.0]), dtype=float).reshape(3)
        q = np.asarray(d.get("q", [1.0, 0.0, 0.0, 0.0]), dtype=float).reshape(4)
    except (ValueError, AttributeError) as exc:
        raise GripperFormatError(f"{where}: offset must have 't' (3 numbers) and 'q' (4 numbers)") from exc
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise GripperFormatError(f"{where}: offset quaternion is not unit length")
    return t, quat_to_matrix(q)


def gripper_from_dict(doc, name="custom") -> GripperModel:
    """Validate a gripper document and build the model."""
    for key in ("links", "joints", "contacts"):
        if key not in doc or not isinstance(doc[key], list):
            raise GripperFormatError(f"missing list field {key!r}")
    names = [ln.get("name") for ln in doc["links"]]
    if any(not isinstance(n, str) for n in names):
        raise GripperFormatError("every link needs a string 'name'")
    if len(set(names)) != len(names):
        raise GripperFormatError("duplicate link names")
    index = {n: i for i, n in enumerate(names)}
    parents = []
    for ln in doc["links"]:
        p = ln.get("parent")
        if p is None:
            parents.append(-1)
        elif p not in index:
            raise GripperFormatError(f"link {ln['name']!r} has unknown parent {p!r}")
        else:
            parents.append(index[p])
    roots = [i for i, p in enumerate(parents) if p < 0]
    if len(roots) != 1:
        raise GripperFormatError(f"expected exactly one root link, found {len(roots)}")
    for start in range(len(parents)):
        seen = set()
        k = start
        while k >= 0:
            if k in seen:
                raise GripperFormatError(f"kinematic cycle at link {names[k]}")
            seen.add(k)
            k = parents[k]

    # topological order: parents before children
    order, placed = [], set()
    while len(order) < len(parents):
        for i, p in enumerate(parents):
            if i not in placed and (p < 0 or p in placed):
                order.append(i)
                placed.add(i)
    remap = {old: new for new, old in enumerate(order)}

    link_joint = np.full(len(parents), -1, dtype=np.int64)
    axes, limits, joint_names = [], [], []
    for j, jd in enumerate(doc["joints"]):
        link = jd.get("link")
        if link not in index:
            raise GripperFormatError(f"joint {j} refers to unknown link {link!r}")
        li = remap[index[link]]
        if parents[index[link]] < 0:
            raise GripperFormatError(f"joint {j} is attached to the root link")
        if link_joint[li] >= 0:
            raise GripperFormatError(f"link {link!r} has more than one joint")
        axis = np.asarray(jd.get("axis"), dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-6:
            raise GripperFormatError(f"joint {j} ({link}): axis is not unit length")
        lo, hi = (float(v) for v in jd.get("limits"))
        if not lo < hi:
            raise GripperFormatError(f"joint {j} ({link}): limits must satisfy lo < hi")
        link_joint[li] = len(axes)
        axes.append(axis)
        limits.append((lo, hi))
        joint_names.append(jd.get("name", link))
    for i, p in enumerate(parents):
        if p >= 0 and link_joint[remap[i]] < 0:
            raise GripperFormatError(f"link {names[i]!r} has no joint")

    rots, trans = np.empty((len(parents), 3, 3)), np.empty((len(parents), 3))
    for old in order:
        t, r = _parse_transform(doc["links"][old].get("offset", {}), f"link {names[old]!r}")
        rots[remap[old]] = r
        trans[remap[old]] = t
    if not doc["contacts"]:
        raise GripperFormatError("gripper needs at least one contact point")
    c_links, c_off = [], []
    for c in doc["contacts"]:
        if c.get("link") not in index:
            raise GripperFormatError(f"contact refers to unknown link {c.get('link')!r}")
        c_links.append(remap[index[c["link"]]])
        c_off.append(np.asarray(c["offset"], dtype=float).reshape(3))

    return GripperModel(
        name=name,
        link_names=tuple(names[o] for o in order),
        parents=np.array([remap[parents[o]] if parents[o] >= 0 else -1 for o in order], dtype=np.int64),
        offset_rotations=rots,
        offset_translations=trans,
        link_joint=link_joint,
        axes=np.array(axes).reshape(-1, 3),
        limits=np.array(limits).reshape(-1, 2),
        contact_links=np.array(c_links, dtype=np.int64),
        contact_offsets=np.array(c_off),
        joint_names=tuple(joint_names),
        source=doc,
    )


def load_gripper(path) -> GripperModel:
    """Load a gripper from a JSON file, or one of the built-ins by name."""
    if str(path) in BUILTIN_GRIPPERS:
        text = resources.files("graspfield.grippers").joinpath(f"{path}.json").read_text()
        name = str(path)
    else:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"gripper file not found: {p}")
        text = p.read_text()
        name = p.stem
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GripperFormatError(f"{path}: invalid JSON ({exc})") from exc
    return gripper_from_dict(doc, name=name)
