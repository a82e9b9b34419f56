"""Layer forward/backward pairs on float64 arrays.

Volumes are laid out ``(N, C, D, H, W)``. Every ``*_forward`` returns the
output and a cache; the matching ``*_backward`` takes the upstream gradient
and that cache.
"""
from __future__ import annotations

import numpy as np

from . import _kernels as _k


def conv3d_forward(x, w):
    """Valid, stride-1 cross-correlation. ``w`` is ``(F, C, k, k, k)``.

    The im2col matrix is cached for the backward pass.
    """
    n = x.shape[0]
    f, k = w.shape[0], w.shape[2]
    out_sp = tuple(s - k + 1 for s in x.shape[2:])
    cols = _k.im2col(np.ascontiguousarray(x), k)  # rows (N, D', H', W'), columns (C, k, k, k)
    out = cols @ w.reshape(f, -1).T  # (N*D'*H'*W', F)
    out = out.reshape((n,) + out_sp + (f,)).transpose(0, 4, 1, 2, 3)
    return np.ascontiguousarray(out), (cols, w, x.shape)


def conv3d_backward(dout, cache, need_dx=True):
    cols, w, x_shape = cache
    f, k = w.shape[0], w.shape[2]
    dmat = dout.transpose(0, 2, 3, 4, 1).reshape(-1, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    if not need_dx:
        return None, dw
    return _k.col2im(dmat @ w.reshape(f, -1), x_shape, k), dw


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, eps=1e-5):
    """Per-channel (volumes) or per-feature (vectors) normalization.

    Train mode normalizes with the biased batch statistics; they are returned
    in the cache so the caller can fold them into the running averages.
    """
    if x.ndim == 5:
        flat = np.ascontiguousarray(x).reshape(x.shape[0], x.shape[1], -1)
        mean, var = _k.channel_moments(flat) if train else (running_mean, running_var)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat, out = _k.bn_apply(flat, mean, inv_std, gamma, beta)
        return out.reshape(x.shape), (xhat.reshape(x.shape), inv_std, gamma, train, mean, var)
    if train:
        mean, var = x.mean(axis=0), x.var(axis=0)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, train, mean, var)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train, _, _ = cache
    if xhat.ndim == 5:
        n, c = xhat.shape[:2]
        dx, dgamma, dbeta = _k.bn_backward(
            np.ascontiguousarray(dout).reshape(n, c, -1), xhat.reshape(n, c, -1), inv_std, gamma, train
        )
        return dx.reshape(xhat.shape), dgamma, dbeta
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    m = len(xhat)
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0.0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x):
    """2x2x2 max pooling, stride 2; odd trailing cells are dropped. Ties keep the first cell."""
    out, arg = _k.maxpool_fwd(np.ascontiguousarray(x))
    return out, (arg, x.shape)


def maxpool_backward(dout, cache):
    """Routes each gradient to the cell recorded in the forward argmax."""
    arg, shape = cache
    return _k.maxpool_bwd(np.ascontiguousarray(dout), arg, shape)


def dense_forward(x, w, b=None):
    out = x @ w
    if b is not None:
        out = out + b
    return out, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)
