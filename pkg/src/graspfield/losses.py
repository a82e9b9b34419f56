"""Training objectives on pose vectors and their sub-gradients.

Pose vectors handled here express the wrist translation in SDF cube units
(meters times the object's ``scale_s``), so translation, quaternion and
joint-angle blocks have comparable magnitudes. Forward kinematics runs in
meters; :func:`contact_sdf` does the conversion.

Every loss averages over the ``N`` items of a batch. A 1-D prediction is a
batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry.sdf import SignedDistanceField, sample_sdf
from .geometry.transforms import RigidTransform, sdf_frame_linear
from .kinematics import GripperModel, fk_jacobian, forward_kinematics


@dataclass
class LossReport:
    value: float
    d_prediction: np.ndarray
    selected_j: Optional[np.ndarray] = None
    sdf_values: Optional[np.ndarray] = None


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None], True) if x.ndim == 1 else (x, False)


def _per_item(obj, n, kind):
    if isinstance(obj, (list, tuple)):
        if len(obj) != n:
            raise ValueError(f"expected {n} {kind} entries, got {len(obj)}")
        return list(obj)
    return [obj] * n


def canonical_sign(x):
    """+1/-1 per row so that the quaternion block has ``w >= 0``."""
    return np.where(x[..., 3] < 0.0, -1.0, 1.0)


def canonicalize(x):
    x = np.array(x, dtype=float)
    x[..., 3:7] *= canonical_sign(x)[..., None]
    return x


def _residual(pred, target):
    """Canonicalized difference and the sign used on the prediction's quaternion."""
    sign = canonical_sign(pred)
    diff = canonicalize(pred) - canonicalize(target)
    return diff, sign


def _chain_sign(grad_canon, sign):
    g = grad_canon.copy()
    g[..., 3:7] *= sign[..., None]
    return g


def l2_loss(prediction, target) -> LossReport:
    pred, single = _as_batch(prediction)
    tgt, _ = _as_batch(target)
    if pred.shape != tgt.shape:
        raise ValueError(f"prediction {pred.shape} and target {tgt.shape} differ")
    n = len(pred)
    diff, sign = _residual(pred, tgt)
    value = float(np.sum(diff * diff) / n)
    grad = _chain_sign(2.0 * diff / n, sign)
    return LossReport(value, grad[0] if single else grad)


def consistency_loss(prediction, candidates) -> LossReport:
    """Mean over items of the smallest squared distance to any candidate.

    Ties pick the lowest candidate index.
    """
    pred, single = _as_batch(prediction)
    cands = np.asarray(candidates, dtype=float)
    if cands.ndim == 2:
        cands = cands[None]
    if cands.shape[0] != len(pred) or cands.shape[2] != pred.shape[1]:
        raise ValueError(f"candidates {cands.shape} do not match prediction {pred.shape}")
    n = len(pred)
    sign = canonical_sign(pred)
    diff = canonicalize(pred)[:, None, :] - canonicalize(cands)
    # same reduction as l2_loss so min over candidates equals it bit for bit
    d2 = np.sum(diff * diff, axis=-1)
    j = np.argmin(d2, axis=1)
    best = diff[np.arange(n), j]
    value = float(d2[np.arange(n), j].sum() / n)
    grad = _chain_sign(2.0 * best / n, sign)
    return LossReport(value, grad[0] if single else grad, selected_j=j[0] if single else j)


def to_metric(x, scale_s):
    """Pose vector(s) with the translation converted from cube units to meters."""
    x = np.array(x, dtype=float)
    x[..., :3] /= scale_s
    return x


def to_cube_units(x, scale_s):
    x = np.array(x, dtype=float)
    x[..., :3] *= scale_s
    return x


def contact_points_sdf_frame(pose, model: GripperModel, sdf: SignedDistanceField, t_r: RigidTransform):
    """Contact points of a cube-unit pose mapped into the SDF cube."""
    a, c = sdf_frame_linear(sdf.t_sdf, t_r)
    return forward_kinematics(model, to_metric(pose, sdf.scale_s)) @ a.T + c


def contact_sdf(pose, model: GripperModel, sdf: SignedDistanceField, t_r: RigidTransform, jacobian=True):
    """Sampled SDF values at the contact points of a single pose.

    Returns ``(values (P,), d_values/d_pose (P, 7+J) or None, points (P, 3))``.
    """
    x = to_metric(pose, sdf.scale_s)
    a, c = sdf_frame_linear(sdf.t_sdf, t_r)
    pts = forward_kinematics(model, x) @ a.T + c
    vals, grads = sample_sdf(sdf, pts)
    if not jacobian:
        return vals, None, pts
    jac = fk_jacobian(model, x)  # (P, 3, D), translation in meters
    dv = np.einsum("pi,ij,pjd->pd", grads, a, jac)
    dv[:, :3] /= sdf.scale_s
    return vals, dv, pts


def contact_values_many(predictions, model: GripperModel, sdfs, t_rs):
    """SDF values ``(N, P)`` at the contact points of ``N`` poses, each with its own field and ``T_r``."""
    x = np.array(predictions, dtype=float).reshape(-1, model.pose_dim)
    n = len(x)
    sdfs = _per_item(sdfs, n, "sdf")
    t_rs = _per_item(t_rs, n, "t_r")
    x[:, :3] /= np.array([f.scale_s for f in sdfs])[:, None]
    pts = forward_kinematics(model, x)
    out = np.empty(pts.shape[:2])
    groups = {}
    for i, f in enumerate(sdfs):
        groups.setdefault(id(f), []).append(i)
    for idx in groups.values():
        field = sdfs[idx[0]]
        q = np.empty((len(idx),) + pts.shape[1:])
        for r, i in enumerate(idx):
            a, c = sdf_frame_linear(field.t_sdf, t_rs[i])
            q[r] = pts[i] @ a.T + c
        vals, _ = sample_sdf(field, q.reshape(-1, 3))
        out[idx] = vals.reshape(len(idx), -1)
    return out


def collision_loss(prediction, model: GripperModel, sdf, t_r) -> LossReport:
    """Mean over items of ``sum_i min(sdf(T(p_i, x)), 0)^2``.

    ``sdf`` and ``t_r`` are either single objects shared by all items or
    per-item sequences. At exactly zero the inside sub-gradient (zero) is used.
    """
    pred, single = _as_batch(prediction)
    n = len(pred)
    sdfs = _per_item(sdf, n, "sdf")
    trs = _per_item(t_r, n, "t_r")
    grad = np.zeros_like(pred)
    values = np.empty((n, model.n_contacts))
    total = 0.0
    for i in range(n):
        v, dv, _ = contact_sdf(pred[i], model, sdfs[i], trs[i])
        neg = np.minimum(v, 0.0)
        total += float(neg @ neg)
        grad[i] = 2.0 * (neg @ dv) / n
        values[i] = v
    return LossReport(total / n, grad[0] if single else grad, sdf_values=values[0] if single else values)


def combined_loss(prediction, candidates, model, sdf, t_r, beta=0.75) -> LossReport:
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    cons = consistency_loss(prediction, candidates)
    if beta == 1.0:
        return cons
    coll = collision_loss(prediction, model, sdf, t_r)
    if beta == 0.0:
        return coll
    return LossReport(
        beta * cons.value + (1.0 - beta) * coll.value,
        beta * cons.d_prediction + (1.0 - beta) * coll.d_prediction,
        selected_j=cons.selected_j,
        sdf_values=coll.sdf_values,
    )


def penetration_stats(prediction, model, sdf: SignedDistanceField, t_r):
    """``(count, max_depth_m, mean_depth_m)`` over contact points with negative SDF.

    Depths are converted from cube units to meters with ``scale_s``; the mean is
    over penetrating points only.
    """
    vals, _, _ = contact_sdf(prediction, model, sdf, t_r, jacobian=False)
    depth = -vals[vals < 0.0] / sdf.scale_s
    if depth.size == 0:
        return 0, 0.0, 0.0
    return int(depth.size), float(depth.max()), float(depth.mean())


LOSS_NAMES = ("l2", "consistency", "combined")


def evaluate_loss(name, prediction, candidates, model=None, sdf=None, t_r=None, beta=0.75) -> LossReport:
    """Dispatch by name; ``l2`` compares against candidate 0."""
    cands = np.asarray(candidates, dtype=float)
    if name == "l2":
        return l2_loss(prediction, cands[..., 0, :])
    if name == "consistency":
        return consistency_loss(prediction, cands)
    if name == "combined":
        return combined_loss(prediction, cands, model, sdf, t_r, beta)
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")


__all__ = [
    "LOSS_NAMES",
    "LossReport",
    "canonicalize",
    "collision_loss",
    "combined_loss",
    "consistency_loss",
    "contact_points_sdf_frame",
    "contact_sdf",
    "contact_values_many",
    "evaluate_loss",
    "l2_loss",
    "penetration_stats",
    "to_cube_units",
    "to_metric",
]
