"""Contact models, grasp wrench spaces, and the epsilon / v quality metrics.

A contact contributes one wrench per discretized friction-cone edge:
``w = (f, ((p - origin) x f) / lambda)`` with unit per-edge force.  Quality of
the wrench set ``W``:

* ``epsilon``: radius of the largest origin-centered ball inside conv(W),
  computed inside the linear span of W.  Any two-point-contact grasp spans at
  most 5 of the 6 wrench dimensions (no wrench can exert torque about the
  line through the two contacts), so the strict 6D ball radius would be
  identically zero for every parallel-jaw grasp; restricting to the span
  measures resistance over the disturbances the contact model can express.

* a force gate: epsilon is zeroed (and force closure denied) unless the
  contact forces alone positively span all of 3D force space.  This keeps a
  frictionless pinch -- whose force span is a line -- out of force closure
  while admitting frictional antipodal grasps.

* ``v``: volume of conv(W) in full 6D, zero whenever W is affinely
  degenerate there (hence zero for every two-contact grasp).

* ``force_closure``: epsilon > 0, by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convexgeom import hull_volume_mc, inscribed_radius_batch
from .errors import NoContacts

DEFAULT_CONE_EDGES = 8
DEFAULT_SEED = 2203  # fixed stream: quality of a wrench set is a pure function

# relative threshold below which a sampled/descended support minimum counts
# as "origin not strictly interior"
_INTERIOR_RTOL = 1e-7
_RANK_RTOL = 1e-7


@dataclass(frozen=True)
class Contact:
    """Hard point contact with Coulomb friction, object frame."""

    point: np.ndarray  # (3,) meters
    normal: np.ndarray  # (3,) unit, outward from the object
    mu: float  # friction coefficient >= 0

    def __post_init__(self):
        p = np.asarray(self.point, dtype=np.float64).reshape(3)
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if not (np.isfinite(p).all() and np.isfinite(n).all()):
            raise ValueError("contact point/normal must be finite")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("contact normal must have unit norm")
        if self.mu < 0:
            raise ValueError("friction coefficient must be >= 0")
        p.flags.writeable = False
        n.flags.writeable = False
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "mu", float(self.mu))


@dataclass(frozen=True)
class WrenchSet:
    """Unit-grasp wrenches (force || torque/lambda) of a contact set."""

    wrenches: np.ndarray  # (n, 6)
    lam: float  # torque scale, meters

    def __post_init__(self):
        w = np.asarray(self.wrenches, dtype=np.float64).reshape(-1, 6)
        if w.shape[0] == 0:
            raise NoContacts("a wrench set needs at least one wrench")
        if not np.isfinite(w).all():
            raise ValueError("wrenches must be finite")
        if not (self.lam > 0):
            raise ValueError("lambda must be > 0")
        w.flags.writeable = False
        object.__setattr__(self, "wrenches", w)
        object.__setattr__(self, "lam", float(self.lam))


@dataclass(frozen=True)
class GraspQuality:
    """epsilon / v metrics plus the force-closure flag (epsilon > 0 <=> closure)."""

    epsilon: float
    v: float
    force_closure: bool

    def __post_init__(self):
        if (self.epsilon > 0) != bool(self.force_closure):
            raise ValueError("epsilon > 0 must coincide with force_closure")
        if self.epsilon < 0 or self.v < 0:
            raise ValueError("metrics must be non-negative")


def _tangent_basis(axis: np.ndarray):
    """Deterministic orthonormal (t1, t2) perpendicular to `axis`."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(axis, ref)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(axis, t1)
    return t1, t2


def friction_cone_edges(contact: Contact, m: int = DEFAULT_CONE_EDGES) -> np.ndarray:
    """m unit force directions evenly spaced on the Coulomb cone.

    Forces press into the surface: every edge e satisfies
    ``e . (-normal) = cos(atan(mu))``.  With mu = 0 the cone collapses to the
    single direction -normal and a (1, 3) array is returned.
    """
    if m < 3:
        raise ValueError("need at least 3 cone edges")
    axis = -contact.normal
    if contact.mu == 0.0:
        return axis.reshape(1, 3).copy()
    denom = np.sqrt(1.0 + contact.mu**2)
    cos_a = 1.0 / denom
    sin_a = contact.mu / denom
    t1, t2 = _tangent_basis(axis)
    phi = 2.0 * np.pi * np.arange(m) / m
    edges = cos_a * axis[None, :] + sin_a * (
        np.cos(phi)[:, None] * t1[None, :] + np.sin(phi)[:, None] * t2[None, :]
    )
    return edges


def wrench_set(contacts, m: int = DEFAULT_CONE_EDGES, lam: float = 1.0, origin=(0.0, 0.0, 0.0)) -> WrenchSet:
    """Wrenches of all cone edges of all contacts about `origin`."""
    contacts = list(contacts)
    if not contacts:
        raise NoContacts("need at least one contact")
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    rows = []
    for c in contacts:
        edges = friction_cone_edges(c, m)
        arm = c.point - origin
        torque = np.cross(np.broadcast_to(arm, edges.shape), edges) / lam
        rows.append(np.hstack([edges, torque]))
    return WrenchSet(np.vstack(rows), lam)


# ---------------------------------------------------------------------------
# Batched quality core.  Single-set entry points wrap the batch path so both
# produce bit-identical numbers.
# ---------------------------------------------------------------------------


def _span_projections(w: np.ndarray):
    """SVD spans of a wrench batch.

    w: (B, n, 6).  Returns (ranks (B,), coords list) where coords[b] is the
    (n, r_b) representation of the wrenches in an orthonormal basis of their
    linear span.
    """
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    smax = s[:, :1]
    ranks = (s > _RANK_RTOL * np.maximum(smax, 1e-300)).sum(axis=1)
    coords = u * s[:, None, :]  # (B, n, 6), column j lives on span axis j
    return ranks, coords


def quality_batch(wrenches: np.ndarray, seed: int = DEFAULT_SEED) -> tuple:
    """(epsilon, force_closure) for a batch of wrench sets (B, n, 6).

    v is not computed here; it is rank-gated separately (see
    :func:`v_measure`) because every two-contact grasp is degenerate in 6D.
    """
    w = np.asarray(wrenches, dtype=np.float64)
    B, n, _ = w.shape
    eps = np.zeros(B)
    if B == 0:
        return eps, np.zeros(B, dtype=bool)

    scale = np.abs(w).reshape(B, -1).max(axis=1)
    nonzero = scale > 0

    # force gate: contact forces must positively span R^3.  Coarser search
    # parameters suffice here: only the sign of the radius matters.
    forces = w[:, :, :3]
    f_rank = np.linalg.matrix_rank(forces, tol=None)
    gate = nonzero & (f_rank == 3)
    if gate.any():
        f_rad = inscribed_radius_batch(forces[gate], seed=seed, n_dirs=512, iters=60, restarts=2)
        ok = f_rad > _INTERIOR_RTOL * scale[gate]
        gate_idx = np.flatnonzero(gate)
        gate[gate_idx[~ok]] = False

    if gate.any():
        ranks, coords = _span_projections(w[gate])
        radii = np.zeros(int(gate.sum()))
        for r in np.unique(ranks):
            sel = ranks == r
            radii[sel] = inscribed_radius_batch(coords[sel][:, :, :r], seed=seed)
        idx = np.flatnonzero(gate)
        good = radii > _INTERIOR_RTOL * scale[gate]
        eps[idx[good]] = radii[good]

    return eps, eps > 0.0


def epsilon_measure(ws: WrenchSet, seed: int = DEFAULT_SEED) -> float:
    """Largest ball radius around the origin inside the wrench hull (span-restricted)."""
    eps, _ = quality_batch(ws.wrenches[None], seed=seed)
    return float(eps[0])


def force_closure(ws: WrenchSet, seed: int = DEFAULT_SEED) -> bool:
    """True iff the grasp resists every disturbance its contact model can express."""
    _, fc = quality_batch(ws.wrenches[None], seed=seed)
    return bool(fc[0])


def v_measure(ws: WrenchSet, seed: int = DEFAULT_SEED, samples: int = 1_000_000) -> float:
    """Volume of the 6D wrench hull; 0 whenever it is affinely degenerate."""
    w = ws.wrenches
    if w.shape[0] < 7:
        return 0.0
    center = w.mean(axis=0)
    rank = np.linalg.matrix_rank(w - center, tol=None)
    if rank < 6:
        return 0.0
    return hull_volume_mc(w, samples=samples, seed=seed)


def grasp_quality(ws: WrenchSet, seed: int = DEFAULT_SEED, v_samples: int = 200_000) -> GraspQuality:
    """Bundle epsilon, v, and force closure for one wrench set."""
    eps, fc = quality_batch(ws.wrenches[None], seed=seed)
    v = v_measure(ws, seed=seed, samples=v_samples)
    return GraspQuality(float(eps[0]), float(v), bool(fc[0]))
