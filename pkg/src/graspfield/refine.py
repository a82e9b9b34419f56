"""Post-prediction pose correction by gradient descent on the collision loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import contact_sdf

MAX_HALVINGS = 5
CLEARANCE_CELLS = 0.01
MAX_TRIES = 64  # halvings plus doublings of a step below float resolution


@dataclass
class RefineResult:
    pose: np.ndarray
    converged: bool
    iterations: int
    objective: float
    penetrations: int
    trace: list

    def __iter__(self):
        # allows ``pose, converged = runtime_adjust(...)``
        return iter((self.pose, self.converged))


def project_pose(x, model):
    """Renormalize the quaternion (w >= 0) and clamp joints into their limits."""
    x = np.array(x, dtype=float)
    q = x[3:7] / np.linalg.norm(x[3:7])
    x[3:7] = q if q[0] >= 0 else -q
    x[7:] = model.clamp(x[7:])
    return x


def _objective(x, nominal, beta, model, sdf, t_r, clearance=0.0):
    v, dv, _ = contact_sdf(x, model, sdf, t_r)
    neg = np.minimum(v - clearance, 0.0)
    coll = float(neg @ neg)
    d = x - nominal
    value = beta * float(d @ d) + (1.0 - beta) * coll
    grad = 2.0 * beta * d + (1.0 - beta) * 2.0 * (neg @ dv)
    return value, grad, int(np.count_nonzero(v < 0.0))


def _descend(x0, nominal, beta, model, sdf, t_r, step, max_iters, joints_only, max_update, clearance=0.0):
    if step <= 0:
        raise ValueError("step must be positive")
    mask = np.zeros(model.pose_dim, dtype=bool)
    if joints_only:
        mask[7:] = True
    else:
        mask[:] = True
    # raw network outputs carry unnormalized quaternions and out-of-range joints
    x = project_pose(x0, model)
    f, g, count = _objective(x, nominal, beta, model, sdf, t_r, clearance)
    trace = [f]
    eta = step
    it = 0
    while it < max_iters:
        if beta == 0.0 and count == 0:
            break
        g = np.where(mask, g, 0.0)
        gnorm = np.linalg.norm(g)
        if gnorm == 0.0:
            break
        accepted = False
        halvings = 0
        for _ in range(MAX_TRIES):
            # never try a step longer than max_update, so halvings always shrink it
            eta = min(eta, max_update / gnorm)
            cand = project_pose(x - eta * g, model)
            if np.array_equal(cand, x):
                # below the resolution of x: the step is too short, not too long
                eta *= 2.0
                continue
            fc, gc, cc = _objective(cand, nominal, beta, model, sdf, t_r, clearance)
            if fc <= f:
                accepted = True
                break
            if halvings == MAX_HALVINGS:
                break
            eta *= 0.5
            halvings += 1
        if not accepted:
            break
        it += 1
        x, f, g, count = cand, fc, gc, cc
        trace.append(f)
        eta *= 2.0
    return RefineResult(x, count == 0, it, f, count, trace)


def runtime_adjust(pose, model, sdf, t_r, step=0.1, max_iters=500, joints_only=True, max_update=0.2):
    """Push a pose out of the object until no contact point penetrates.

    Iterates ``x <- x - step * grad L_collision(x)``. A step that increases
    the loss is halved (at most five times); an accepted step doubles the next
    one, and a single update never moves the pose by more than ``max_update``.
    The start and every update are projected: the quaternion is renormalized
    and joints are clamped.

    The squared hinge is zero on the whole penetration-free set, so descent
    from outside reaches that set only in the limit when several points
    compete. The descent therefore aims for a clearance of
    ``CLEARANCE_CELLS`` cells, while convergence still means no value < 0.
    """
    x = np.asarray(pose, dtype=float)
    return _descend(x, x, 0.0, model, sdf, t_r, step, max_iters, joints_only, max_update,
                    CLEARANCE_CELLS * sdf.cell)


def pose_refine(nominal, model, sdf, t_r, beta=0.5, step=0.1, max_iters=500, joints_only=True, max_update=0.2):
    """Minimize ``beta |x - nominal|^2 + (1 - beta) L_collision(x)`` from ``nominal``.

    Uses the same step policy as :func:`runtime_adjust`; with ``beta = 0`` the
    two produce the same trajectory (including its clearance target). For
    ``beta > 0`` the objective is used as written.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    # the proximity anchor is the projected (valid) nominal pose
    x = project_pose(nominal, model)
    clearance = CLEARANCE_CELLS * sdf.cell if beta == 0.0 else 0.0
    return _descend(x, x, beta, model, sdf, t_r, step, max_iters, joints_only, max_update, clearance)
