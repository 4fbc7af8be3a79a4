"""Independent oracles used by the test suite.

Everything here is deliberately written without reusing the package's own
algorithms: brute-force loops, scipy reference routines, and closed forms.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull


def point_triangle_distance(p, a, b, c) -> float:
    """Exact distance from a point to one triangle (region decomposition)."""
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + t * ab)))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + t * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + t * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v, w = vb * denom, vc * denom
    return float(np.linalg.norm(p - (a + v * ab + w * ac)))


def point_mesh_distance(p, mesh) -> float:
    v, t = mesh.vertices, mesh.triangles
    return min(point_triangle_distance(p, v[i], v[j], v[k]) for i, j, k in t)


def brute_force_ray_hit(mesh, origin, direction, tmin=1e-9):
    """Nearest ray-triangle hit by a plain per-triangle loop."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    best = None
    for tri_idx, (i, j, k) in enumerate(mesh.triangles):
        v0, v1, v2 = mesh.vertices[i], mesh.vertices[j], mesh.vertices[k]
        e1, e2 = v1 - v0, v2 - v0
        pvec = np.cross(direction, e2)
        det = e1 @ pvec
        if abs(det) < 1e-300:
            continue
        inv = 1.0 / det
        tvec = origin - v0
        u = (tvec @ pvec) * inv
        if u < -1e-9:
            continue
        qvec = np.cross(tvec, e1)
        v = (direction @ qvec) * inv
        if v < -1e-9 or u + v > 1 + 1e-9:
            continue
        t = (e2 @ qvec) * inv
        if t <= tmin:
            continue
        if best is None or t < best[0]:
            best = (t, tri_idx)
    return best


def support_min_bruteforce(points, n_dirs=1_000_000, seed=0, refine=200) -> float:
    """min over unit u of max_i points . u by dense sampling + local polish."""
    points = np.asarray(points, dtype=np.float64)
    d = points.shape[1]
    rng = np.random.default_rng(seed)
    best_val, best_u = np.inf, None
    chunk = 200_000
    left = n_dirs
    while left > 0:
        m = min(chunk, left)
        left -= m
        u = rng.standard_normal((m, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        h = (u @ points.T).max(axis=1)
        i = h.argmin()
        if h[i] < best_val:
            best_val, best_u = float(h[i]), u[i]
    u = best_u
    step = 0.1
    for _ in range(refine):
        trial = u[None, :] + step * rng.standard_normal((64, d))
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        h = (trial @ points.T).max(axis=1)
        i = h.argmin()
        if h[i] < best_val:
            best_val, u = float(h[i]), trial[i]
        else:
            step *= 0.7
    return best_val


def exact_inscribed_radius_hull(points) -> float:
    """Min facet-plane distance from the origin via an exact convex hull.

    Valid when the origin is interior; works in any dimension qhull
    supports (used here for 3D planar oracles).
    """
    hull = ConvexHull(np.asarray(points, dtype=np.float64))
    norms = np.linalg.norm(hull.equations[:, :-1], axis=1)
    return float((-hull.equations[:, -1] / norms).min())


def exact_hull_volume(points) -> float:
    return float(ConvexHull(np.asarray(points, dtype=np.float64)).volume)


def in_hull_lp(x, points) -> bool:
    """Membership via linear-program feasibility."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    res = linprog(
        np.zeros(n),
        A_eq=np.vstack([points.T, np.ones(n)]),
        b_eq=np.concatenate([np.asarray(x, dtype=np.float64), [1.0]]),
        bounds=[(0, None)] * n,
        method="highs",
    )
    return res.status == 0


def origin_in_relint_lp(points, tol=1e-9) -> bool:
    """Strict positive-weight combination of `points` summing to zero."""
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_eq = np.zeros((d + 1, n + 1))
    a_eq[:d, :n] = points.T
    a_eq[d, :n] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    a_ub = np.zeros((n, n + 1))
    a_ub[:, :n] = -np.eye(n)
    a_ub[:, n] = 1.0
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=np.zeros(n),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(0, None)] * n + [(0, 1)],
        method="highs",
    )
    return res.status == 0 and -res.fun > tol


def separating_direction_search(wrenches, n_dirs=200_000, seed=3):
    """Look for a direction with all wrench components <= 0 (brute force)."""
    w = np.asarray(wrenches, dtype=np.float64)
    d = w.shape[1]
    rng = np.random.default_rng(seed)
    span = np.linalg.svd(w, full_matrices=False)[2]
    rank = np.linalg.matrix_rank(w)
    basis = span[:rank]
    u = rng.standard_normal((n_dirs, rank)) @ basis
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    h = (u @ w.T).max(axis=1)
    i = h.argmin()
    return float(h[i]), u[i]


def wilcoxon_exact_enumeration(pairs, alternative="a<b"):
    """Independent exact signed-rank p by explicit loop over sign vectors."""
    import itertools

    arr = np.asarray(pairs, dtype=np.float64)
    diff = arr[:, 1] - arr[:, 0]
    if alternative == "a>b":
        diff = -diff
    diff = diff[diff != 0]
    n = len(diff)
    absd = np.abs(diff)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(n)
    i = 0
    sorted_abs = absd[order]
    while i < n:
        j = i
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    t_obs = ranks[diff > 0].sum()
    count = 0
    for signs in itertools.product((0, 1), repeat=n):
        t = sum(r for s, r in zip(signs, ranks) if s)
        if t >= t_obs - 1e-12:
            count += 1
    return t_obs, count / 2.0**n


def conv3d_reference(x, w, b, stride, pad):
    """Straight-line 3D convolution: loops only, no im2col."""
    n, ci, d, _, _ = x.shape
    co, _, k, _, _ = w.shape
    od = (d + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    out = np.zeros((n, co, od, od, od))
    for nn in range(n):
        for oc in range(co):
            for z in range(od):
                for y in range(od):
                    for xx in range(od):
                        acc = b[oc]
                        for ic in range(ci):
                            for a in range(k):
                                for bb in range(k):
                                    for g in range(k):
                                        acc += (
                                            w[oc, ic, a, bb, g]
                                            * xp[nn, ic, z * stride + a, y * stride + bb, xx * stride + g]
                                        )
                        out[nn, oc, z, y, xx] = acc
    return out


def tconv3d_reference(x, w, b, stride, pad):
    """Straight-line transposed 3D convolution (scatter form)."""
    n, ci, d, _, _ = x.shape
    _, co, k, _, _ = w.shape
    od = (d - 1) * stride - 2 * pad + k
    full = od + 2 * pad
    out = np.zeros((n, co, full, full, full))
    for nn in range(n):
        for ic in range(ci):
            for z in range(d):
                for y in range(d):
                    for xx in range(d):
                        val = x[nn, ic, z, y, xx]
                        for oc in range(co):
                            for a in range(k):
                                for bb in range(k):
                                    for g in range(k):
                                        out[nn, oc, z * stride + a, y * stride + bb, xx * stride + g] += (
                                            val * w[ic, oc, a, bb, g]
                                        )
    if pad:
        out = out[:, :, pad:-pad, pad:-pad, pad:-pad]
    return out + b[None, :, None, None, None]


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))
