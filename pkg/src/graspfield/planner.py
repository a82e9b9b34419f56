"""Simulated-annealing grasp planner over the contact-distance cost.

Poses are in cube units (see :mod:`graspfield.losses`) and expressed in the
object frame, whose origin is the object's center of mass.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry.sdf import SignedDistanceField, sample_sdf
from .geometry.transforms import RigidTransform, quat_canonical, quat_mul, rotvec_quat, sdf_frame_linear
from .kinematics import GripperModel, forward_kinematics


@dataclass(frozen=True)
class AnnealConfig:
    iterations: int = 2000
    candidates_per_iter: int = 10
    initial_temperature: float = 1.0
    cooling_rate: float = 0.995
    rng_seed: int = 0
    step_translation: float = 0.05
    step_rotation: float = 0.05
    step_joints: float = 0.1
    penetration_weight: float = 10.0
    init_radius: float = 1.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.candidates_per_iter < 1:
            raise ValueError("candidates_per_iter must be >= 1")
        if not 0.0 < self.cooling_rate < 1.0:
            raise ValueError("cooling_rate must lie in (0, 1)")
        if self.initial_temperature <= 0.0:
            raise ValueError("initial_temperature must be positive")

    def with_seed(self, seed):
        return AnnealConfig(**{**asdict(self), "rng_seed": int(seed)})


@dataclass(frozen=True)
class GraspCost:
    total: float
    surface_term: float
    penetration_term: float
    weight: float
    max_depth: float

    @classmethod
    def from_values(cls, values, weight):
        surface = float(np.maximum(values, 0.0).sum())
        depth = np.maximum(-values, 0.0)
        pen = float(depth @ depth)
        return cls(surface + weight * pen, surface, pen, weight, float(depth.max(initial=0.0)))


def contact_values_batch(poses, model: GripperModel, sdf: SignedDistanceField, t_r=None):
    """SDF values at the contact points of a ``(B, 7+J)`` batch of cube-unit poses."""
    t_r = t_r or RigidTransform.identity()
    x = np.array(poses, dtype=float)
    x[:, :3] /= sdf.scale_s
    a, c = sdf_frame_linear(sdf.t_sdf, t_r)
    pts = forward_kinematics(model, x) @ a.T + c
    vals, _ = sample_sdf(sdf, pts.reshape(-1, 3))
    return vals.reshape(len(x), -1)


def _costs(values, weight):
    depth = np.maximum(-values, 0.0)
    return np.maximum(values, 0.0).sum(axis=1) + weight * (depth * depth).sum(axis=1), depth.max(axis=1)


def look_at_quat(direction):
    """Shortest-arc rotation taking +z onto ``direction``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    z = np.array([0.0, 0.0, 1.0])
    c = float(z @ d)
    if c < -1.0 + 1e-12:
        return np.array([0.0, 1.0, 0.0, 0.0])
    axis = np.cross(z, d)
    q = np.concatenate([[1.0 + c], axis])
    return quat_canonical(q / np.linalg.norm(q))


def initial_pose(model: GripperModel, rng, radius=1.5):
    """Wrist on a sphere of ``radius`` (cube units) around the center, facing it."""
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    x = np.zeros(model.pose_dim)
    x[:3] = radius * u
    x[3:7] = look_at_quat(-u)
    x[7:] = model.clamp(np.zeros(model.n_joints))
    return x


def _perturb(x, rng, n, cfg: AnnealConfig, model: GripperModel):
    out = np.repeat(x[None], n, axis=0)
    out[:, :3] += rng.normal(scale=cfg.step_translation, size=(n, 3))
    dq = rotvec_quat(rng.normal(scale=cfg.step_rotation, size=(n, 3)))
    out[:, 3:7] = quat_canonical(quat_mul(out[:, 3:7], dq))
    out[:, 7:] = model.clamp(out[:, 7:] + rng.normal(scale=cfg.step_joints, size=(n, model.n_joints)))
    return out


def plan_grasp(model: GripperModel, sdf: SignedDistanceField, cfg: AnnealConfig, initial=None, trace=None):
    """Anneal one grasp; returns the best feasible pose seen and its cost.

    A pose is feasible when no contact point is deeper than half a cell. Each
    iteration draws ``candidates_per_iter`` Gaussian perturbations of the
    incumbent; the cheapest one replaces the incumbent under the Metropolis
    rule. Best-so-far costs are appended to ``trace`` when given.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    x = initial_pose(model, rng, cfg.init_radius) if initial is None else np.array(initial, dtype=float)
    limit = 0.5 * sdf.cell
    cost, depth = _costs(contact_values_batch(x[None], model, sdf), cfg.penetration_weight)
    cur = float(cost[0])
    best_x, best_cost = (x.copy(), cur) if depth[0] <= limit else (None, np.inf)
    fallback_x, fallback_cost = x.copy(), cur
    temp = cfg.initial_temperature
    for _ in range(cfg.iterations):
        cands = _perturb(x, rng, cfg.candidates_per_iter, cfg, model)
        costs, depths = _costs(contact_values_batch(cands, model, sdf), cfg.penetration_weight)
        k = int(np.argmin(costs))
        feas = np.flatnonzero(depths <= limit)
        if feas.size:
            kf = feas[np.argmin(costs[feas])]
            if costs[kf] < best_cost:
                best_x, best_cost = cands[kf].copy(), float(costs[kf])
        if costs[k] < fallback_cost:
            fallback_x, fallback_cost = cands[k].copy(), float(costs[k])
        delta = costs[k] - cur
        u = rng.random()
        if delta <= 0.0 or u < np.exp(-delta / temp):
            x, cur = cands[k], float(costs[k])
        temp *= cfg.cooling_rate
        if trace is not None:
            trace.append(best_cost if best_x is not None else fallback_cost)
    if best_x is None:
        best_x = fallback_x
    vals = contact_values_batch(best_x[None], model, sdf)[0]
    return best_x, GraspCost.from_values(vals, cfg.penetration_weight)


def plan_k_grasps(model, sdf, cfg: AnnealConfig, k: int):
    """``k`` independent restarts seeded ``rng_seed + i``, sorted by total cost."""
    if k < 1:
        raise ValueError("k must be >= 1")
    results = [plan_grasp(model, sdf, cfg.with_seed(cfg.rng_seed + i)) for i in range(k)]
    order = sorted(range(k), key=lambda i: results[i][1].total)
    return [results[i] for i in order]
