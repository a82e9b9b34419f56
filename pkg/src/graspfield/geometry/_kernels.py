"""Compiled inner loops for inside tests and distance fields."""
import numpy as np
from numba import njit

# Slightly tilted ray directions; the first is almost +x. Later ones are only
# used when a ray grazes an edge or vertex.
RAY_DIRECTIONS = np.array(
    [
        [1.0, 1.234567e-7, 2.718281e-7],
        [1.0, 0.3141592, -0.1414213],
        [1.0, -0.2718281, 0.1732050],
        [0.8660254, 0.4123105, 0.2828427],
        [-1.0, 0.1123581, 0.3217609],
    ]
)


@njit(cache=True)
def _ray_parity(p, d, v0, e1, e2, eps):
    """Count crossings of the ray ``p + t d`` (t > 0); -1 when a hit is ambiguous."""
    count = 0
    for k in range(v0.shape[0]):
        # Moller-Trumbore
        px = d[1] * e2[k, 2] - d[2] * e2[k, 1]
        py = d[2] * e2[k, 0] - d[0] * e2[k, 2]
        pz = d[0] * e2[k, 1] - d[1] * e2[k, 0]
        det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
        if abs(det) < 1e-300:
            continue
        inv = 1.0 / det
        sx = p[0] - v0[k, 0]
        sy = p[1] - v0[k, 1]
        sz = p[2] - v0[k, 2]
        u = (sx * px + sy * py + sz * pz) * inv
        if u < -eps or u > 1.0 + eps:
            continue
        qx = sy * e1[k, 2] - sz * e1[k, 1]
        qy = sz * e1[k, 0] - sx * e1[k, 2]
        qz = sx * e1[k, 1] - sy * e1[k, 0]
        v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
        if v < -eps or u + v > 1.0 + eps:
            continue
        t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
        if abs(t) <= eps:
            return -1
        if t < 0.0:
            continue
        if u < eps or v < eps or u + v > 1.0 - eps:
            return -1
        count += 1
    return count


@njit(cache=True)
def inside_mask(points, v0, e1, e2, directions, eps):
    n = points.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        parity = 0
        for r in range(directions.shape[0]):
            c = _ray_parity(points[i], directions[r], v0, e1, e2, eps)
            if c >= 0:
                parity = c
                break
            # every direction ambiguous: the point sits on the surface; call it inside
            parity = 1
        out[i] = parity % 2 == 1
    return out


@njit(cache=True)
def _point_triangle_dist2(px, py, pz, a, b, c):
    # Ericson, Real-Time Collision Detection, closest point on triangle
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    apx, apy, apz = px - a[0], py - a[1], pz - a[2]
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - b[0], py - b[1], pz - b[2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx, qy, qz = a[0] + v * abx, a[1] + v * aby, a[2] + v * abz
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    cpx, cpy, cpz = px - c[0], py - c[1], pz - c[2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = a[0] + w * acx, a[1] + w * acy, a[2] + w * acz
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = b[0] + w * (c[0] - b[0])
        qy = b[1] + w * (c[1] - b[1])
        qz = b[2] + w * (c[2] - b[2])
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = a[0] + abx * v + acx * w
    qy = a[1] + aby * v + acy * w
    qz = a[2] + abz * v + acz * w
    return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2


@njit(cache=True)
def point_mesh_distance(points, corners):
    """Brute-force unsigned distance from each point to the triangle soup."""
    out = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        best = np.inf
        for k in range(corners.shape[0]):
            d2 = _point_triangle_dist2(points[i, 0], points[i, 1], points[i, 2], corners[k, 0], corners[k, 1], corners[k, 2])
            if d2 < best:
                best = d2
        out[i] = np.sqrt(best)
    return out


@njit(cache=True)
def narrow_band(corners, n, h, band):
    """Exact unsigned distance on nodes ``i*h`` within ``band`` of any triangle.

    Nodes not reached stay at ``inf``; values above ``band`` are discarded
    because their nearest triangle may not have been visited.
    """
    dist = np.full((n, n, n), np.inf)
    for k in range(corners.shape[0]):
        lo0 = min(corners[k, 0, 0], corners[k, 1, 0], corners[k, 2, 0]) - band
        lo1 = min(corners[k, 0, 1], corners[k, 1, 1], corners[k, 2, 1]) - band
        lo2 = min(corners[k, 0, 2], corners[k, 1, 2], corners[k, 2, 2]) - band
        hi0 = max(corners[k, 0, 0], corners[k, 1, 0], corners[k, 2, 0]) + band
        hi1 = max(corners[k, 0, 1], corners[k, 1, 1], corners[k, 2, 1]) + band
        hi2 = max(corners[k, 0, 2], corners[k, 1, 2], corners[k, 2, 2]) + band
        i0, i1 = max(0, int(np.ceil(lo0 / h))), min(n - 1, int(np.floor(hi0 / h)))
        j0, j1 = max(0, int(np.ceil(lo1 / h))), min(n - 1, int(np.floor(hi1 / h)))
        k0, k1 = max(0, int(np.ceil(lo2 / h))), min(n - 1, int(np.floor(hi2 / h)))
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                for m in range(k0, k1 + 1):
                    d2 = _point_triangle_dist2(i * h, j * h, m * h, corners[k, 0], corners[k, 1], corners[k, 2])
                    d = np.sqrt(d2)
                    if d < dist[i, j, m]:
                        dist[i, j, m] = d
    for i in range(n):
        for j in range(n):
            for m in range(n):
                if dist[i, j, m] > band:
                    dist[i, j, m] = np.inf
    return dist


@njit(cache=True)
def _godunov(a, b, c, h):
    # sort a <= b <= c
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    u = a + h
    if u <= b:
        return u
    u = 0.5 * (a + b + np.sqrt(2.0 * h * h - (a - b) ** 2))
    if u <= c:
        return u
    s = a + b + c
    disc = s * s - 3.0 * (a * a + b * b + c * c - h * h)
    return (s + np.sqrt(max(disc, 0.0))) / 3.0


@njit(cache=True)
def fast_sweep(u, frozen, h, tol, max_passes):
    """Gauss-Seidel sweeps in the 8 axis orderings until the largest update < tol.

    Returns the number of full passes performed.
    """
    n0, n1, n2 = u.shape
    big = 1e30
    for idx in np.ndindex(u.shape):
        if not frozen[idx] and not np.isfinite(u[idx]):
            u[idx] = big
    passes = 0
    for _ in range(max_passes):
        passes += 1
        max_change = 0.0
        for order in range(8):
            si = 1 if order & 1 == 0 else -1
            sj = 1 if order & 2 == 0 else -1
            sk = 1 if order & 4 == 0 else -1
            for ii in range(n0):
                i = ii if si > 0 else n0 - 1 - ii
                for jj in range(n1):
                    j = jj if sj > 0 else n1 - 1 - jj
                    for kk in range(n2):
                        k = kk if sk > 0 else n2 - 1 - kk
                        if frozen[i, j, k]:
                            continue
                        a = big
                        if i > 0:
                            a = u[i - 1, j, k]
                        if i < n0 - 1 and u[i + 1, j, k] < a:
                            a = u[i + 1, j, k]
                        b = big
                        if j > 0:
                            b = u[i, j - 1, k]
                        if j < n1 - 1 and u[i, j + 1, k] < b:
                            b = u[i, j + 1, k]
                        c = big
                        if k > 0:
                            c = u[i, j, k - 1]
                        if k < n2 - 1 and u[i, j, k + 1] < c:
                            c = u[i, j, k + 1]
                        if a >= big and b >= big and c >= big:
                            continue
                        new = _godunov(a, b, c, h)
                        old = u[i, j, k]
                        if new < old:
                            u[i, j, k] = new
                            change = old - new
                            if change > max_change:
                                max_change = change
        if max_change < tol:
            break
    return passes
