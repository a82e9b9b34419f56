"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Parameters


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, layer, max_abs):
        super().__init__(f"non-finite gradient in {layer} (max |g| over finite entries = {max_abs:.6g})")
        self.layer = layer
        self.max_abs = max_abs


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16

    @classmethod
    def zeros(cls, size, **kw):
        return cls(np.zeros(size), np.zeros(size), **kw)

    @classmethod
    def for_params(cls, params: Parameters, **kw):
        return cls.zeros(params.trainable_vector().size, **kw)


def adam_update(x, g, state: AdamState):
    """One Adam step on a flat vector; returns the new vector and advances ``state``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape != state.m.shape or x.shape != g.shape:
        raise ValueError(f"shape mismatch: x {x.shape}, g {g.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(g)):
        finite = g[np.isfinite(g)]
        raise NonFiniteGradientError("parameter vector", float(np.abs(finite).max(initial=0.0)))
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return x - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(params: Parameters, grads, state: AdamState) -> Parameters:
    """Update the trainable arrays of ``params`` in place (and return it).

    ``grads`` is a ``{name: array}`` dict or a flat trainable-order vector.
    A non-finite entry aborts before anything changes, naming the layer.
    """
    g = params.grads_vector(grads) if isinstance(grads, dict) else np.asarray(grads, dtype=float)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        layer = params.segment_of(int(bad[0]))
        seg = np.asarray(grads[layer] if isinstance(grads, dict) else g, dtype=float)
        finite = seg[np.isfinite(seg)]
        raise NonFiniteGradientError(layer, float(np.abs(finite).max(initial=0.0)))
    params.set_trainable_vector(adam_update(params.trainable_vector(), g, state))
    return params
