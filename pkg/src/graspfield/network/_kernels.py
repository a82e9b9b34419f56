"""Compiled inner loops for the volume layers."""
import numpy as np
from numba import njit


@njit(cache=True)
def im2col(x, k):
    n, c, d, h, w = x.shape
    d1, h1, w1 = d - k + 1, h - k + 1, w - k + 1
    kk = k * k * k
    cols = np.empty((n * d1 * h1 * w1, c * kk))
    row = 0
    for b in range(n):
        for i in range(d1):
            for j in range(h1):
                for l in range(w1):
                    col = 0
                    for ch in range(c):
                        for a in range(k):
                            for e in range(k):
                                for f in range(k):
                                    cols[row, col] = x[b, ch, i + a, j + e, l + f]
                                    col += 1
                    row += 1
    return cols


@njit(cache=True)
def col2im(dcols, shape, k):
    n, c, d, h, w = shape
    d1, h1, w1 = d - k + 1, h - k + 1, w - k + 1
    dx = np.zeros((n, c, d, h, w))
    row = 0
    for b in range(n):
        for i in range(d1):
            for j in range(h1):
                for l in range(w1):
                    col = 0
                    for ch in range(c):
                        for a in range(k):
                            for e in range(k):
                                for f in range(k):
                                    dx[b, ch, i + a, j + e, l + f] += dcols[row, col]
                                    col += 1
                    row += 1
    return dx


@njit(cache=True)
def channel_moments(x):
    """Per-channel mean and biased variance of an ``(N, C, S)`` array."""
    n, c, s = x.shape
    mean = np.zeros(c)
    var = np.zeros(c)
    m = n * s
    for ch in range(c):
        acc = 0.0
        for b in range(n):
            for i in range(s):
                acc += x[b, ch, i]
        mu = acc / m
        acc = 0.0
        for b in range(n):
            for i in range(s):
                t = x[b, ch, i] - mu
                acc += t * t
        mean[ch] = mu
        var[ch] = acc / m
    return mean, var


@njit(cache=True)
def maxpool_fwd(x):
    n, c, d, h, w = x.shape
    d2, h2, w2 = d // 2, h // 2, w // 2
    out = np.empty((n, c, d2, h2, w2))
    arg = np.empty((n, c, d2, h2, w2), dtype=np.int8)
    for b in range(n):
        for ch in range(c):
            for i in range(d2):
                for j in range(h2):
                    for l in range(w2):
                        best = -np.inf
                        ib = 0
                        q = 0
                        for a in range(2):
                            for e in range(2):
                                for f in range(2):
                                    v = x[b, ch, 2 * i + a, 2 * j + e, 2 * l + f]
                                    if v > best:
                                        best = v
                                        ib = q
                                    q += 1
                        out[b, ch, i, j, l] = best
                        arg[b, ch, i, j, l] = ib
    return out, arg


@njit(cache=True)
def maxpool_bwd(dout, arg, shape):
    n, c, d, h, w = shape
    dx = np.zeros((n, c, d, h, w))
    d2, h2, w2 = arg.shape[2], arg.shape[3], arg.shape[4]
    for b in range(n):
        for ch in range(c):
            for i in range(d2):
                for j in range(h2):
                    for l in range(w2):
                        q = arg[b, ch, i, j, l]
                        a = q // 4
                        e = (q // 2) % 2
                        f = q % 2
                        dx[b, ch, 2 * i + a, 2 * j + e, 2 * l + f] = dout[b, ch, i, j, l]
    return dx


@njit(cache=True)
def bn_apply(x, mean, inv_std, gamma, beta):
    """Normalized ``xhat`` and ``gamma * xhat + beta`` for ``(N, C, S)`` input."""
    n, c, s = x.shape
    xhat = np.empty_like(x)
    out = np.empty_like(x)
    for b in range(n):
        for ch in range(c):
            mu, k, g, t = mean[ch], inv_std[ch], gamma[ch], beta[ch]
            for i in range(s):
                v = (x[b, ch, i] - mu) * k
                xhat[b, ch, i] = v
                out[b, ch, i] = g * v + t
    return xhat, out


@njit(cache=True)
def bn_backward(dout, xhat, inv_std, gamma, train):
    n, c, s = dout.shape
    dgamma = np.zeros(c)
    dbeta = np.zeros(c)
    for b in range(n):
        for ch in range(c):
            for i in range(s):
                dgamma[ch] += dout[b, ch, i] * xhat[b, ch, i]
                dbeta[ch] += dout[b, ch, i]
    dx = np.empty_like(dout)
    m = n * s
    for ch in range(c):
        g, k = gamma[ch], inv_std[ch]
        # sums of dxhat and dxhat * xhat are gamma * dbeta and gamma * dgamma
        s1, s2 = g * dbeta[ch], g * dgamma[ch]
        for b in range(n):
            for i in range(s):
                d = dout[b, ch, i] * g
                if train:
                    dx[b, ch, i] = k / m * (m * d - s1 - xhat[b, ch, i] * s2)
                else:
                    dx[b, ch, i] = d * k
    return dx, dgamma, dbeta
