"""Dimension-generic convex geometry used by the grasp quality metrics.

Three primitives, all deterministic given a seed and all vectorized over a
batch of point sets:

* inscribed-ball radius of a convex hull around the origin, computed as the
  minimum over unit directions u of the support function
  ``h(u) = max_i p_i . u``.  Seeded direction sampling localizes the minimum,
  projected subgradient descent refines it, and a final "facet snap" solves
  for the supporting hyperplane through the active vertices, which makes the
  result exact whenever the correct facet was identified.  The returned value
  can be <= 0, which certifies that the origin is not interior.

* hull membership for a batch of query points, via Wolfe's min-norm-point
  algorithm on ``min_{lambda in simplex} |P^T lambda - x|^2`` (finite
  termination, every step a dense batched numpy op).

* Monte-Carlo hull volume: uniform samples in the bounding box, a support
  prefilter that discards certifiably-outside samples, membership for the
  survivors.
"""
from __future__ import annotations

import numpy as np

from .seeding import keyed_generator

# Internal constant seed for cached direction banks: callers control the
# stream by passing their own seed, offsets keep banks distinct per use.
_DIR_BANK = {}


def unit_directions(n: int, dim: int, seed: int) -> np.ndarray:
    """(n, dim) unit vectors, deterministic per (n, dim, seed), cached."""
    key = (int(n), int(dim), int(seed))
    cached = _DIR_BANK.get(key)
    if cached is not None:
        return cached
    rng = keyed_generator(seed, 0xD1B, dim, n)
    v = rng.standard_normal((n, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    v /= norms
    v.flags.writeable = False
    _DIR_BANK[key] = v
    return v


def _support_min_sampled(pts: np.ndarray, dirs: np.ndarray, n_best: int):
    """Sampled support minima.

    pts: (B, n, d); dirs: (K, d).  Returns (best_vals (B,), best_dirs
    (B, n_best, d)) where best_dirs are the n_best directions with the
    smallest support values per batch row.
    """
    B, n, d = pts.shape
    K = dirs.shape[0]
    vals = np.empty((B, K))
    # chunk over the batch to bound the (b, n, K) intermediate
    chunk = max(1, int(4_000_000 // max(1, n * K)))
    dirs_t = np.ascontiguousarray(dirs.T)
    for s in range(0, B, chunk):
        e = min(B, s + chunk)
        prod = (pts[s:e].reshape(-1, d) @ dirs_t).reshape(e - s, n, K)
        vals[s:e] = prod.max(axis=1)
    order = np.argsort(vals, axis=1)[:, :n_best]
    best_dirs = dirs[order]  # (B, n_best, d)
    best_vals = np.take_along_axis(vals, order[:, :1], axis=1)[:, 0]
    return best_vals, best_dirs


def _support_at(pts: np.ndarray, u: np.ndarray):
    """h(u) and the argmax vertex for each (batch row, direction).

    pts: (B, n, d); u: (B, R, d).  Returns (h (B, R), grad (B, R, d)).
    """
    dots = np.matmul(pts, u.swapaxes(1, 2))  # (B, n, R)
    arg = dots.argmax(axis=1)  # (B, R)
    h = np.take_along_axis(dots, arg[:, None, :], axis=1)[:, 0, :]
    b_idx = np.arange(pts.shape[0])[:, None]
    grad = pts[b_idx, arg]  # (B, R, d)
    return h, grad


def _normalize_rows(u: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return u / safe


def inscribed_radius_batch(
    pts: np.ndarray,
    seed: int = 0,
    n_dirs: int = 4096,
    iters: int = 200,
    restarts: int = 4,
    snap_rounds: int = 3,
    snap_seeds: int = 24,
) -> np.ndarray:
    """min over unit u of max_i pts[b, i] . u, per batch row.

    For origin interior to the hull this equals the inscribed-ball radius;
    a value <= 0 certifies the origin is on or outside the hull boundary.
    pts: (B, n, d), d >= 1.  Deterministic given `seed`.

    The facet snap runs both on the subgradient-descent endpoints and on
    the `snap_seeds` best sampled directions, so distinct local basins all
    get a chance to produce their exact facet distance.
    """
    pts = np.asarray(pts, dtype=np.float64)
    B, n, d = pts.shape
    scale = np.abs(pts).reshape(B, -1).max(axis=1)
    out = np.zeros(B)
    live = scale > 0
    if not live.any():
        return out
    work = pts[live] / scale[live, None, None]

    dirs = unit_directions(n_dirs, d, seed)
    _, seed_dirs = _support_min_sampled(work, dirs, max(restarts, snap_seeds))
    u = seed_dirs[:, :restarts]

    # projected subgradient descent on the unit sphere, batched over restarts
    h, g = _support_at(work, u)
    best_h = h.copy()  # per-restart best value
    best_u = u.copy()
    for t in range(iters):
        # tangential subgradient step with harmonic decay
        g_tan = g - np.einsum("brd,brd->br", g, u)[..., None] * u
        u = _normalize_rows(u - (0.25 / (1.0 + t)) * g_tan)
        h, g = _support_at(work, u)
        improved = h < best_h
        best_h = np.where(improved, h, best_h)
        best_u = np.where(improved[..., None], u, best_u)

    # facet snap on every descent endpoint and sampled seed: solve for the
    # supporting hyperplane through the d most-active vertices, keep the best
    cand_u = np.concatenate([best_u, seed_dirs[:, :snap_seeds]], axis=1)
    cand_h = np.concatenate(
        [best_h, np.matmul(work, seed_dirs[:, :snap_seeds].swapaxes(1, 2)).max(axis=1)], axis=1
    )
    Bl, R = cand_h.shape
    flat_pts = np.repeat(work, R, axis=0)  # (Bl*R, n, d)
    u_star = cand_u.reshape(Bl * R, d)
    val = cand_h.reshape(Bl * R)
    rows = np.arange(Bl * R)
    for _ in range(snap_rounds):
        dots = np.matmul(flat_pts, u_star[:, :, None])[:, :, 0]
        top = np.argsort(-dots, axis=1)[:, :d]
        V = flat_pts[rows[:, None], top]  # (Bl*R, d, d)
        nvec = np.matmul(np.linalg.pinv(V), np.ones((Bl * R, d, 1)))[..., 0]
        nn = np.linalg.norm(nvec, axis=1)
        ok = nn > 1e-12
        cand = np.where(ok[:, None], nvec / np.where(ok, nn, 1.0)[:, None], u_star)
        h_cand = np.matmul(flat_pts, cand[:, :, None])[:, :, 0].max(axis=1)
        better = h_cand < val
        val = np.where(better, h_cand, val)
        u_star = np.where(better[:, None], cand, u_star)

    out[live] = val.reshape(Bl, R).min(axis=1) * scale[live]
    return out


def inscribed_radius(pts: np.ndarray, seed: int = 0, **kw) -> float:
    """Single-set convenience wrapper around :func:`inscribed_radius_batch`."""
    pts = np.asarray(pts, dtype=np.float64)
    return float(inscribed_radius_batch(pts[None], seed=seed, **kw)[0])


def hull_distance_batch(x: np.ndarray, pts: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Euclidean distance from each query point `x` (B, d) to conv(pts) (n, d).

    Wolfe's min-norm-point algorithm run in lockstep over the batch: each
    major cycle adds the most violating vertex to the working set and solves
    the affine least-norm subproblem exactly (one batched linear solve per
    minor cycle), so termination is finite and the result is exact to
    floating-point resolution.  Distances are relative to the joint data
    scale times `rel_tol` at the optimality test.
    """
    x = np.asarray(x, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    B, d = x.shape
    n = pts.shape[0]
    if B == 0:
        return np.zeros(0)
    scale = max(float(np.abs(pts).max()), float(np.abs(x).max()), 1e-300)
    dist = np.zeros(B)
    active_rows = np.arange(B)
    q = (pts[None, :, :] - x[:, None, :]) / scale  # (B, n, d)
    gram = np.einsum("bnd,bmd->bnm", q, q, optimize=True)  # (B, n, n)

    lam = np.zeros((B, n))
    start = np.einsum("bnn->bn", gram).argmin(axis=1)
    lam[np.arange(B), start] = 1.0
    support = lam > 0  # working set

    K = min(n, d + 2)  # Wolfe working sets stay affinely independent: <= d+1
    eyeK = np.eye(K + 1)
    max_major = 4 * (n + d) + 16
    for _ in range(max_major):
        z = np.einsum("bn,bnd->bd", lam, q)
        zz = np.einsum("bd,bd->b", z, z)
        dots = np.einsum("bnd,bd->bn", q, z)
        j = dots.argmin(axis=1)
        bi = np.arange(lam.shape[0])
        full = support.sum(axis=1) >= K
        done = (dots[bi, j] >= zz - rel_tol * np.maximum(zz, 1.0)) | full | support[bi, j]
        if done.any():
            dist[active_rows[done]] = np.sqrt(np.maximum(zz[done], 0.0)) * scale
            keep = ~done
            if not keep.any():
                return dist
            active_rows = active_rows[keep]
            q, gram, lam, support, j = q[keep], gram[keep], lam[keep], support[keep], j[keep]
            bi = np.arange(lam.shape[0])
        support[bi, j] = True

        # minor cycles on the padded working set: affine minimization plus
        # removal of vertices whose affine weight went non-positive
        for _ in range(K + 1):
            m = lam.shape[0]
            # support indices first (stable keeps them sorted), padded mask
            idx = np.argsort(~support, axis=1, kind="stable")[:, :K]
            valid = np.take_along_axis(support, idx, axis=1)  # (m, K)
            bcol = np.arange(m)[:, None, None]
            subg = gram[bcol, idx[:, :, None], idx[:, None, :]]  # (m, K, K)
            pair = valid[:, :, None] & valid[:, None, :]
            sys = np.broadcast_to(eyeK, (m, K + 1, K + 1)).copy()
            sys[:, :K, :K] = np.where(pair, subg, sys[:, :K, :K])
            sys[:, :K, :K] += (1e-13 * np.eye(K)) * valid[:, :, None]
            sys[:, K, :K] = valid
            sys[:, :K, K] = valid
            sys[:, K, K] = 0.0
            rhs = np.zeros((m, K + 1))
            rhs[:, K] = 1.0
            mu_sub = np.linalg.solve(sys, rhs[:, :, None])[:, :K, 0]
            mu_sub[~valid] = 0.0
            mu = np.zeros_like(lam)
            np.put_along_axis(mu, idx, mu_sub, axis=1)
            neg = support & (mu <= 1e-12)
            rows_ok = ~neg.any(axis=1)
            lam[rows_ok] = mu[rows_ok]
            rows_fix = ~rows_ok
            if not rows_fix.any():
                break
            lf = lam[rows_fix]
            mf = mu[rows_fix]
            negf = neg[rows_fix]
            ratio = np.where(negf, lf / np.maximum(lf - mf, 1e-300), np.inf)
            theta = np.minimum(ratio.min(axis=1), 1.0)
            lam_new = lf + theta[:, None] * (mf - lf)
            lam_new[negf & (ratio <= theta[:, None] + 1e-15)] = 0.0
            np.clip(lam_new, 0.0, None, out=lam_new)
            ssum = lam_new.sum(axis=1, keepdims=True)
            lam_new /= np.maximum(ssum, 1e-300)
            lam[rows_fix] = lam_new
            support[rows_fix] = lam[rows_fix] > 0.0

    z = np.einsum("bn,bnd->bd", lam, q)
    dist[active_rows] = np.linalg.norm(z, axis=1) * scale
    return dist


def hull_membership_batch(x: np.ndarray, pts: np.ndarray, rel_tol: float = 1e-7) -> np.ndarray:
    """Boolean membership of query points `x` (B, d) in conv(pts) (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    scale = max(float(np.abs(pts).max()), float(np.abs(x).max()), 1e-300)
    return hull_distance_batch(x, pts) <= rel_tol * scale


def hull_volume_mc(
    pts: np.ndarray,
    samples: int = 200_000,
    seed: int = 0,
    prefilter_dirs: int = 64,
    chunk: int = 65536,
) -> float:
    """Monte-Carlo volume of conv(pts) in its ambient dimension.

    Uniform samples in the axis-aligned bounding box; each sample is kept
    iff it is a hull member.  A bank of support-function halfspaces rejects
    certifiably-outside samples before the exact membership test.  Returns
    0 for affinely degenerate inputs.  Deterministic given `seed`.
    """
    pts = np.asarray(pts, dtype=np.float64)
    n, d = pts.shape
    center = pts.mean(axis=0)
    if n <= d or np.linalg.matrix_rank(pts - center, tol=1e-12 * max(1.0, np.abs(pts).max())) < d:
        return 0.0
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    box = float(np.prod(hi - lo))
    if box == 0.0:
        return 0.0

    dirs = unit_directions(prefilter_dirs, d, seed + 1)
    support = pts @ dirs.T  # (n, K)
    h = support.max(axis=0)  # (K,)
    slack = 1e-12 * max(1.0, float(np.abs(support).max()))

    rng = keyed_generator(seed, 0xB0C)
    hits = 0
    remaining = int(samples)
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        x = rng.uniform(lo, hi, size=(m, d))
        inside_box = np.all(x @ dirs.T <= h + slack, axis=1)
        cand = x[inside_box]
        if cand.shape[0]:
            hits += int(hull_membership_batch(cand, pts).sum())
    return box * hits / float(samples)
