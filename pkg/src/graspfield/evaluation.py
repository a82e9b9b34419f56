"""Experiment harness: residual tables, penetration statistics, resampled prediction, grasp quality."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import norm, qmc

from .geometry.mesh import TriMesh, write_obj
from .geometry.sdf import SignedDistanceField, sample_sdf
from .geometry.transforms import RigidTransform, augmentation_rotations
from .geometry.voxel import voxelize
from .kinematics import GripperModel, forward_kinematics
from .losses import LOSS_NAMES, contact_sdf, contact_values_many, to_metric
from .network.model import forward
from .network.training import predict_batched, residuals_from_predictions
from .refine import pose_refine, runtime_adjust

CONE_EDGES = 8


# ---------------------------------------------------------------- residuals


class MissingCheckpointError(KeyError):
    pass


def residual_matrix(models: dict, dataset, beta=0.75, split="test", gripper=None):
    """3x3 residuals: rows are the training loss, columns the evaluation metric.

    ``models`` maps each of ``l2``, ``consistency``, ``combined`` to a
    ``(params, network_config)`` pair. Both axes follow that order.
    """
    missing = [name for name in LOSS_NAMES if name not in models]
    if missing:
        raise MissingCheckpointError(f"missing checkpoint for loss {missing[0]!r}")
    part = dataset.subset(split) if split else dataset
    if len(part) == 0:
        raise ValueError(f"dataset has no {split!r} entries")
    from .kinematics import load_gripper

    model = gripper or load_gripper(dataset.gripper)
    grids, cands, ctx = part.grids(), part.candidates(), part.contexts()
    out = np.empty((3, 3))
    for r, name in enumerate(LOSS_NAMES):
        params, config = models[name]
        pred = predict_batched(params, config, grids)
        vals = contact_values_many(pred, model, [c[0] for c in ctx], [c[1] for c in ctx])
        res = residuals_from_predictions(pred, cands, vals, beta)
        out[r] = [res[c] for c in LOSS_NAMES]
    return out


def write_residual_matrix(path, matrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trained_with"] + list(LOSS_NAMES))
        for name, row in zip(LOSS_NAMES, matrix):
            w.writerow([name] + [repr(float(v)) for v in row])


def read_residual_matrix(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


# ---------------------------------------------------------------- penetration


@dataclass
class PenetrationReport:
    n: int
    mean_count: float
    mean_depth: float             # per-entry mean depth (0 when clean), averaged; meters
    mean_depth_penetrating: float  # over all penetrating points; meters
    max_depth: float
    refined: bool = False
    converged_fraction: float = float("nan")
    mean_relative_change: float = float("nan")
    counts: np.ndarray = field(default=None, repr=False)
    poses: np.ndarray = field(default=None, repr=False)

    def row(self):
        return {
            "n": self.n,
            "refined": int(self.refined),
            "mean_count": self.mean_count,
            "mean_depth_m": self.mean_depth,
            "mean_depth_penetrating_m": self.mean_depth_penetrating,
            "max_depth_m": self.max_depth,
            "converged_fraction": self.converged_fraction,
            "mean_relative_change": self.mean_relative_change,
        }


def _stats(values, scales):
    depth = np.maximum(-values, 0.0) / scales[:, None]
    counts = (values < 0.0).sum(axis=1)
    per_entry = np.where(counts > 0, depth.sum(axis=1) / np.maximum(counts, 1), 0.0)
    pen = depth[values < 0.0]
    return counts, per_entry, pen


def penetration_report(params, config, dataset, with_refinement=False, model=None, split="test",
                       max_iters=500, step=0.1, joints_only=False):
    """Penetrating-point count and depth over a split, optionally after runtime adjustment."""
    from .kinematics import load_gripper

    part = dataset.subset(split) if split else dataset
    if len(part) == 0:
        raise ValueError(f"dataset has no {split!r} entries")
    model = model or load_gripper(dataset.gripper)
    ctx = part.contexts()
    pred = predict_batched(params, config, part.grids())
    conv = None
    change = float("nan")
    if with_refinement:
        refined, conv, rel = [], [], []
        for x, (sdf, t_r) in zip(pred, ctx):
            res = runtime_adjust(x, model, sdf, t_r, step=step, max_iters=max_iters, joints_only=joints_only)
            refined.append(res.pose)
            conv.append(res.converged)
            rel.append(np.linalg.norm(res.pose - x) / max(np.linalg.norm(x), 1e-12))
        pred = np.array(refined)
        change = float(np.mean(rel))
    vals = contact_values_many(pred, model, [c[0] for c in ctx], [c[1] for c in ctx])
    scales = np.array([c[0].scale_s for c in ctx])
    counts, per_entry, pen = _stats(vals, scales)
    return PenetrationReport(
        n=len(pred),
        mean_count=float(counts.mean()),
        mean_depth=float(per_entry.mean()),
        mean_depth_penetrating=float(pen.mean()) if pen.size else 0.0,
        max_depth=float(pen.max()) if pen.size else 0.0,
        refined=with_refinement,
        converged_fraction=float(np.mean(conv)) if conv is not None else float("nan"),
        mean_relative_change=change,
        counts=counts,
        poses=pred,
    )


def write_penetration_table(path, reports: dict):
    """``reports`` maps a label (e.g. ``"combined/refined"``) to a :class:`PenetrationReport`."""
    rows = [{"model": k, **r.row()} for k, r in reports.items()]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------- grasp quality


@lru_cache(maxsize=8)
def _halton_normals(count):
    # unscrambled, so every smaller set is a prefix of a larger one
    pts = qmc.Halton(d=6, scramble=False).random(count + 1)[1:]
    g = norm.ppf(pts)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sphere_directions(count):
    """``count`` quasi-uniform unit vectors in R^6; nested across counts."""
    if count < 1:
        raise ValueError("need at least one direction")
    return _halton_normals(int(count)).copy()


def _tangent_basis(n):
    a = np.where(np.abs(n[:, :1]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    return t1, np.cross(n, t1)


def contact_wrenches(points, normals, center, radius, mu, edges=CONE_EDGES):
    """Primitive wrenches ``(C * edges, 6)`` of point contacts with Coulomb friction.

    ``normals`` point out of the object; each contact pushes along ``-n``
    with the friction cone approximated by ``edges`` unnormalized edge
    vectors ``-n + mu * t``. Torques are about ``center`` and divided by
    ``radius``.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    n = np.atleast_2d(np.asarray(normals, dtype=float))
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    t1, t2 = _tangent_basis(n)
    phi = 2.0 * np.pi * np.arange(edges) / edges
    f = -n[:, None, :] + mu * (np.cos(phi)[None, :, None] * t1[:, None, :] + np.sin(phi)[None, :, None] * t2[:, None, :])
    r = (p - np.asarray(center, dtype=float))[:, None, :]
    tau = np.cross(np.broadcast_to(r, f.shape), f) / radius
    return np.concatenate([f, tau], axis=2).reshape(-1, 6)


def epsilon_from_wrenches(wrenches, directions=256):
    """Sampled support-function bound ``min_u max_w <w, u>``, clamped at zero."""
    w = np.atleast_2d(wrenches)
    if len(w) == 0:
        return 0.0
    u = sphere_directions(directions)
    return float(max(0.0, (u @ w.T).max(axis=1).min()))


def epsilon_from_contacts(points, normals, center, radius, friction_mu, directions=256):
    if friction_mu <= 0:
        raise ValueError("friction_mu must be positive")
    if directions < 64:
        raise ValueError("use at least 64 directions")
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 3)
    if len(points) < 2:
        # one friction cone lies in a half-space of force directions
        return 0.0
    return epsilon_from_wrenches(contact_wrenches(points, normals, center, radius, friction_mu), directions)


def grasp_contacts(pose, model: GripperModel, sdf: SignedDistanceField, t_r=None, threshold=None):
    """Contact points within ``threshold`` (default one cell) of the surface, with outward normals (cube frame)."""
    t_r = t_r or RigidTransform.identity()
    vals, _, pts = contact_sdf(pose, model, sdf, t_r, jacobian=False)
    thr = sdf.cell if threshold is None else threshold
    keep = np.abs(vals) <= thr
    _, grads = sample_sdf(sdf, pts[keep])
    grads = np.atleast_2d(grads).reshape(-1, 3)
    ok = np.linalg.norm(grads, axis=1) > 1e-12
    return pts[keep][ok], grads[ok]


def epsilon_quality(pose, model, sdf, friction_mu=0.5, directions=256, t_r=None):
    """Approximate epsilon metric of a cube-unit pose; 0 with fewer than two contacts."""
    pts, normals = grasp_contacts(pose, model, sdf, t_r)
    if len(pts) < 2:
        if friction_mu <= 0:
            raise ValueError("friction_mu must be positive")
        return 0.0
    return epsilon_from_contacts(pts, normals, sdf.center, sdf.bounding_radius, friction_mu, directions)


# ---------------------------------------------------------------- prediction with resampling


@dataclass
class Attempt:
    rotation_index: int        # -1 for the unrotated object
    pose: np.ndarray           # object frame, cube units
    penetrations: int
    epsilon: float
    passed: bool


@dataclass
class ResampleResult:
    pose: np.ndarray
    rotations_tried: int
    epsilon: float
    passed: bool
    attempts: list


def predict_with_resampling(params, config, mesh: TriMesh, sdf: SignedDistanceField, model: GripperModel,
                            max_rotations=5, seed=0, beta=0.5, friction_mu=0.5, directions=256,
                            max_iters=500, step=0.1):
    """Predict, refine and gate; on failure rotate the object and try again.

    The first attempt uses the object as given, later ones draw rotations
    from the augmentation set in a seeded order. A pose passes with zero
    penetrating points and positive epsilon. Returns the first passing pose,
    otherwise the attempt with the largest epsilon. Poses are returned in
    the object frame.
    """
    if max_rotations < 1:
        raise ValueError("max_rotations must be >= 1")
    rots = augmentation_rotations()
    order = np.random.default_rng(seed).permutation(len(rots))
    tries = [None] + [int(i) for i in order[: max_rotations - 1]]
    attempts = []
    for ridx in tries:
        t_r = RigidTransform.identity() if ridx is None else rots[ridx]
        grid = voxelize(mesh if ridx is None else mesh.transformed(t_r), config.input_resolution)
        x, _ = forward(params, config, grid.as_array(), "eval")
        res = pose_refine(x[0], model, sdf, t_r, beta=beta, step=step, max_iters=max_iters, joints_only=False)
        pose = res.pose
        if res.penetrations:
            pose = runtime_adjust(pose, model, sdf, t_r, step=step, max_iters=max_iters, joints_only=False).pose
        vals, _, _ = contact_sdf(pose, model, sdf, t_r, jacobian=False)
        pen = int(np.count_nonzero(vals < 0.0))
        eps = epsilon_quality(pose, model, sdf, friction_mu, directions, t_r)
        if ridx is not None:
            pose = _unrotate(pose, t_r)
        passed = pen == 0 and eps > 0.0
        attempts.append(Attempt(-1 if ridx is None else ridx, pose, pen, eps, passed))
        if passed:
            break
    if attempts[-1].passed:
        best = attempts[-1]
    else:
        best = max(attempts, key=lambda a: a.epsilon)
    return ResampleResult(best.pose, len(attempts), best.epsilon, best.passed, attempts)


def _unrotate(pose, t_r: RigidTransform):
    from .dataset import rotate_pose

    return rotate_pose(pose, t_r.inverse())


# ---------------------------------------------------------------- scene export


def _octahedron(center, r):
    v = center + r * np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    f = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return v, f


def export_scene(path, mesh: TriMesh, model: GripperModel, pose, scale_s, marker=0.003):
    """OBJ with the object and a small octahedron per gripper contact point (object frame, meters)."""
    pts = forward_kinematics(model, to_metric(pose, scale_s))
    verts, faces = [mesh.vertices], [mesh.triangles]
    offset = len(mesh.vertices)
    for p in pts:
        v, f = _octahedron(p, marker)
        verts.append(v)
        faces.append(f + offset)
        offset += len(v)
    write_obj(TriMesh(np.vstack(verts), np.vstack(faces)), path)


__all__ = [
    "Attempt",
    "MissingCheckpointError",
    "PenetrationReport",
    "ResampleResult",
    "contact_wrenches",
    "epsilon_from_contacts",
    "epsilon_from_wrenches",
    "epsilon_quality",
    "export_scene",
    "grasp_contacts",
    "penetration_report",
    "predict_with_resampling",
    "read_residual_matrix",
    "residual_matrix",
    "sphere_directions",
    "write_penetration_table",
    "write_residual_matrix",
]
