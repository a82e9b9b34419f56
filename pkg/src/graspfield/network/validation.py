"""Input checks shared by the estimator and the trainer."""
from __future__ import annotations

import numpy as np

from ..geometry.voxel import OccupancyGrid


def check_grids(X, resolution=None):
    """Coerce grids to a float ``(n, R, R, R)`` array.

    Accepts an array, a single ``(R, R, R)`` grid, or a sequence of
    :class:`OccupancyGrid`. Raises ``ValueError`` on ragged, empty,
    non-cubic, non-finite or wrong-resolution input.
    """
    if isinstance(X, OccupancyGrid):
        X = [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], OccupancyGrid):
        X = [g.as_array() for g in X]
    try:
        arr = np.asarray(X, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"grids could not be converted to a float array: {exc}") from exc
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim == 5 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 4 or not (arr.shape[1] == arr.shape[2] == arr.shape[3]):
        raise ValueError(f"expected grids of shape (n, R, R, R), got {arr.shape}")
    if len(arr) == 0:
        raise ValueError("no grids given")
    if resolution is not None and arr.shape[1] != resolution:
        raise ValueError(f"grid resolution {arr.shape[1]} does not match the network input {resolution}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("grids contain non-finite values")
    return arr


def check_candidates(y, n, pose_dim=None):
    """Coerce targets to ``(n, K, D)``; a ``(n, D)`` array becomes ``K = 1``."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, None]
    if arr.ndim != 3:
        raise ValueError(f"expected candidate poses of shape (n, K, D) or (n, D), got {arr.shape}")
    if arr.shape[0] != n:
        raise ValueError(f"{n} grids but {arr.shape[0]} target sets")
    if arr.shape[1] < 1:
        raise ValueError("each item needs at least one candidate pose")
    if pose_dim is not None and arr.shape[2] != pose_dim:
        raise ValueError(f"pose dimension {arr.shape[2]} does not match the gripper ({pose_dim})")
    if not np.all(np.isfinite(arr)):
        raise ValueError("candidate poses contain non-finite values")
    return arr


def check_contexts(contexts, n):
    if contexts is None:
        return None
    contexts = list(contexts)
    if len(contexts) != n:
        raise ValueError(f"{n} grids but {len(contexts)} (sdf, t_r) contexts")
    return contexts
