"""Grasp candidate generation, per-mesh evaluation, and robust ranking.

The end effector is a parallel-jaw abstraction: a grasp is an approach ray
toward the object plus a jaw axis perpendicular to it.  Closing is
simulated by casting the two opposing jaw rays from the grasp point; the
first surface hit within half the jaw opening on each side becomes a hard
point contact.  A candidate planned on the mean completed shape is
re-contacted this way on every sampled shape, and candidates are ranked by
their mean quality metric across samples.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dropoutnet
from .errors import DegenerateMesh, EmptyCloud, EmptyTable
from .meshing import TriMesh, ray_intersect_batch, shape_complete_mesh
from .seeding import as_generator
from .voxelgrid import PointCloud, VoxelGrid, jaccard, mean_grid, threshold, voxelize
from .wrench import DEFAULT_SEED, quality_batch

_METRICS = ("epsilon", "v")


@dataclass(frozen=True)
class Grasp:
    """Parallel-jaw grasp candidate."""

    approach_point: np.ndarray  # (3,) hand start, meters
    approach_dir: np.ndarray  # (3,) unit, toward the object
    jaw_axis: np.ndarray  # (3,) unit, perpendicular to approach_dir
    max_opening: float  # meters
    standoff: float  # meters from approach_point to the grasp point

    def __post_init__(self):
        ap = np.asarray(self.approach_point, dtype=np.float64).reshape(3)
        ad = np.asarray(self.approach_dir, dtype=np.float64).reshape(3)
        ja = np.asarray(self.jaw_axis, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(ad) - 1.0) > 1e-9 or abs(np.linalg.norm(ja) - 1.0) > 1e-9:
            raise ValueError("approach_dir and jaw_axis must be unit vectors")
        if abs(float(ad @ ja)) > 1e-9:
            raise ValueError("jaw_axis must be perpendicular to approach_dir")
        if not (self.max_opening > 0):
            raise ValueError("max_opening must be > 0")
        for a in (ap, ad, ja):
            a.flags.writeable = False
        object.__setattr__(self, "approach_point", ap)
        object.__setattr__(self, "approach_dir", ad)
        object.__setattr__(self, "jaw_axis", ja)
        object.__setattr__(self, "max_opening", float(self.max_opening))
        object.__setattr__(self, "standoff", float(self.standoff))

    @property
    def grasp_point(self) -> np.ndarray:
        return self.approach_point + self.standoff * self.approach_dir

    def to_dict(self) -> dict:
        return {
            "approach_point": [float(v) for v in self.approach_point],
            "approach_dir": [float(v) for v in self.approach_dir],
            "jaw_axis": [float(v) for v in self.jaw_axis],
            "max_opening": self.max_opening,
            "standoff": self.standoff,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Grasp":
        return cls(
            np.array(doc["approach_point"]),
            np.array(doc["approach_dir"]),
            np.array(doc["jaw_axis"]),
            doc["max_opening"],
            doc["standoff"],
        )


@dataclass(frozen=True)
class GraspScoreTable:
    """Per-(candidate, sample) quality metrics backing the robust average."""

    grasps: tuple  # G candidates
    epsilon: np.ndarray  # (G, I)
    v: np.ndarray  # (G, I)
    force_closure: np.ndarray  # (G, I) bool
    sample_ids: tuple  # I identifiers

    def __post_init__(self):
        g, i = len(self.grasps), len(self.sample_ids)
        eps = np.asarray(self.epsilon, dtype=np.float64).reshape(g, i)
        vv = np.asarray(self.v, dtype=np.float64).reshape(g, i)
        fc = np.asarray(self.force_closure, dtype=bool).reshape(g, i)
        if g == 0 or i == 0:
            raise EmptyTable("score table needs at least one grasp and one sample")
        for a in (eps, vv, fc):
            a.flags.writeable = False
        object.__setattr__(self, "grasps", tuple(self.grasps))
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "v", vv)
        object.__setattr__(self, "force_closure", fc)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    def metric(self, name: str) -> np.ndarray:
        if name not in _METRICS:
            raise ValueError(f"metric must be one of {_METRICS}")
        return self.epsilon if name == "epsilon" else self.v


@dataclass(frozen=True)
class PlanConfig:
    """Knobs of the planning pipeline (defaults are the desk-scale setup).

    `padding` widens the completion frame around the observed cloud; a
    single view needs generous room for the occluded side to be completed
    inside the grid at all."""

    padding: float = 0.3
    use_dropout: bool = True
    metric: str = "epsilon"
    cone_edges: int = 8
    mu: float = 0.5
    standoff_scale: float = 0.5  # x bounding radius
    max_opening: float = 0.30  # meters; fixed gripper stroke, desk scale
    wrench_seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.metric not in _METRICS:
            raise ValueError(f"metric must be one of {_METRICS}")


def _batched_tangent_basis(axes: np.ndarray):
    """Deterministic orthonormal frames perpendicular to each axis row."""
    ref = np.tile(np.array([0.0, 0.0, 1.0]), (len(axes), 1))
    ref[np.abs(axes[:, 2]) >= 0.9] = (1.0, 0.0, 0.0)
    t1 = np.cross(axes, ref)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(axes, t1)
    return t1, t2


def _jaw_contacts(mesh: TriMesh, centers, jaws, openings, vertex_normals=None):
    """Contacts found by the two opposing jaw rays of each grasp.

    Returns (ok (B,), points (B, 2, 3), normals (B, 2, 3)); rows with
    ok=False found fewer than two contacts within max_opening/2.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    jaws = np.asarray(jaws, dtype=np.float64).reshape(-1, 3)
    openings = np.asarray(openings, dtype=np.float64).reshape(-1)
    B = len(centers)
    vn = mesh.vertex_normals() if vertex_normals is None else vertex_normals
    pts = np.zeros((B, 2, 3))
    nrm = np.zeros((B, 2, 3))
    ok = np.ones(B, dtype=bool)
    for side, sgn in enumerate((1.0, -1.0)):
        dirs = sgn * jaws
        hit, t, tri, bu, bv = ray_intersect_batch(mesh, centers, dirs)
        good = hit & (t <= openings / 2.0)
        ok &= good
        idx = np.flatnonzero(good)
        if idx.size == 0:
            continue
        pts[idx, side] = centers[idx] + t[idx, None] * dirs[idx]
        tr = mesh.triangles[tri[idx]]
        w0 = (1.0 - bu[idx] - bv[idx])[:, None]
        n = w0 * vn[tr[:, 0]] + bu[idx, None] * vn[tr[:, 1]] + bv[idx, None] * vn[tr[:, 2]]
        bad = np.linalg.norm(n, axis=1) < 1e-12
        if bad.any():
            n[bad] = mesh.triangle_normals()[tri[idx][bad]]
        nrm[idx, side] = n / np.linalg.norm(n, axis=1, keepdims=True)
    return ok, pts, nrm


def _cone_wrenches(points, normals, mu, m, lam, origin):
    """Wrench blocks for a batch of contacts.

    points/normals: (B, 3).  Returns (B, m, 6) with m=1 when mu == 0.
    """
    axes = -np.asarray(normals, dtype=np.float64)
    if mu == 0.0:
        edges = axes[:, None, :]
    else:
        denom = np.sqrt(1.0 + mu * mu)
        t1, t2 = _batched_tangent_basis(axes)
        phi = 2.0 * np.pi * np.arange(m) / m
        edges = (axes[:, None, :] / denom) + (mu / denom) * (
            np.cos(phi)[None, :, None] * t1[:, None, :] + np.sin(phi)[None, :, None] * t2[:, None, :]
        )
    arm = np.asarray(points, dtype=np.float64) - origin
    torque = np.cross(np.broadcast_to(arm[:, None, :], edges.shape), edges) / lam
    return np.concatenate([edges, torque], axis=2)


def evaluate_grasps(grasps, mesh: TriMesh, m: int = 8, mu: float = 0.5, seed: int = DEFAULT_SEED):
    """Quality of every grasp against one mesh.

    Returns (epsilon (G,), v (G,), force_closure (G,)).  Grasps whose jaws
    find fewer than two contacts score (0, 0, False).  v is rank-gated: a
    two-contact wrench set never spans 6D, so it is always 0 here.
    """
    grasps = list(grasps)
    G = len(grasps)
    eps = np.zeros(G)
    v = np.zeros(G)
    fc = np.zeros(G, dtype=bool)
    if G == 0 or mesh.is_empty:
        return eps, v, fc
    centers = np.stack([g.grasp_point for g in grasps])
    jaws = np.stack([g.jaw_axis for g in grasps])
    openings = np.array([g.max_opening for g in grasps])
    ok, pts, nrm = _jaw_contacts(mesh, centers, jaws, openings)
    if not ok.any():
        return eps, v, fc
    origin = mesh.bbox_center()
    lam = float(np.linalg.norm(mesh.vertices - origin, axis=1).max())
    idx = np.flatnonzero(ok)
    w1 = _cone_wrenches(pts[idx, 0], nrm[idx, 0], mu, m, lam, origin)
    w2 = _cone_wrenches(pts[idx, 1], nrm[idx, 1], mu, m, lam, origin)
    wrenches = np.concatenate([w1, w2], axis=1)  # (B, 2m, 6)
    e, f = quality_batch(wrenches, seed=seed)
    eps[idx] = e
    fc[idx] = f
    return eps, v, fc


def evaluate_grasp(g: Grasp, mesh: TriMesh, m: int = 8, mu: float = 0.5, seed: int = DEFAULT_SEED):
    """Single-grasp wrapper; same code path as the batched evaluator."""
    from .wrench import GraspQuality

    eps, v, fc = evaluate_grasps([g], mesh, m=m, mu=mu, seed=seed)
    return GraspQuality(float(eps[0]), float(v[0]), bool(fc[0]))


def plan_candidates(
    mesh: TriMesh,
    n: int,
    rng,
    standoff_scale: float = 0.5,
    max_opening: float = 0.30,
) -> list:
    """Sample up to `n` reachable parallel-jaw candidates on a closed mesh.

    Approach directions are uniform on the sphere around the volume
    centroid; the grasp point is the midpoint of the approach ray's chord
    through the mesh; the jaw axis is uniform in the plane perpendicular to
    the approach.  Candidates whose closing rays do not find two opposing
    contacts are discarded.
    """
    if mesh.is_empty:
        raise DegenerateMesh("cannot plan on an empty mesh")
    if n < 1:
        raise ValueError("need n >= 1")
    gen = as_generator(rng)
    centroid = mesh.volume_centroid()
    radius = mesh.bounding_radius(centroid)
    standoff = standoff_scale * radius
    opening = max_opening

    dirs = gen.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    angles = gen.uniform(0.0, 2.0 * np.pi, size=n)

    origins = centroid[None, :] - dirs * (2.0 * radius)
    hit1, t1, _, _, _ = ray_intersect_batch(mesh, origins, dirs)
    entry = origins + t1[:, None] * dirs
    # chord exit: continue just past the entry point
    nudge = 1e-6 * max(radius, 1e-12)
    hit2, t2, _, _, _ = ray_intersect_batch(mesh, entry + nudge * dirs, dirs)
    ok = hit1 & hit2
    exit_pts = entry + (nudge + t2)[:, None] * dirs
    centers = (entry + exit_pts) / 2.0

    t1b, t2b = _batched_tangent_basis(dirs)
    jaws = np.cos(angles)[:, None] * t1b + np.sin(angles)[:, None] * t2b
    jaws /= np.linalg.norm(jaws, axis=1, keepdims=True)

    reach, _, _ = _jaw_contacts(mesh, centers, jaws, np.full(n, opening))
    ok &= reach

    out = []
    for i in np.flatnonzero(ok):
        out.append(
            Grasp(
                approach_point=centers[i] - standoff * dirs[i],
                approach_dir=dirs[i],
                jaw_axis=jaws[i],
                max_opening=opening,
                standoff=standoff,
            )
        )
    if not out:
        raise DegenerateMesh("no grasp candidate survived on this mesh")
    return out


def rank_grasps(table: GraspScoreTable, metric: str = "epsilon") -> list:
    """Candidates ordered by descending mean metric across samples.

    Ties break by the secondary metric mean, then by candidate index, so
    the order is a deterministic total order and the head is the maximizer
    of the sample-averaged quality.
    """
    primary = table.metric(metric).mean(axis=1)
    secondary_name = "v" if metric == "epsilon" else "epsilon"
    secondary = table.metric(secondary_name).mean(axis=1)
    idx = np.arange(len(table.grasps))
    order = np.lexsort((idx, -secondary, -primary))
    return [(table.grasps[i], float(primary[i])) for i in order]


@dataclass(frozen=True)
class PlanResult:
    """Ranked grasps plus everything needed to audit the run."""

    ranking: tuple  # ((Grasp, mean score), ...) descending
    table: GraspScoreTable
    mean_grid: VoxelGrid
    sample_grids: tuple
    diagnostics: dict


def robust_plan(
    cloud: PointCloud,
    params: dropoutnet.NetworkParams,
    n_samples: int,
    n_candidates: int,
    config: PlanConfig = PlanConfig(),
    rng=0,
) -> PlanResult:
    """The full pipeline: voxelize, sample completions, plan on the mean,
    score every candidate on every sample, rank by average quality.

    With ``config.use_dropout=False`` every "sample" is the deterministic
    network output, which reduces the run to point-estimate planning.
    """
    if cloud.is_empty:
        raise EmptyCloud("robust_plan needs a non-empty cloud")
    if n_samples < 1:
        raise ValueError("need at least one shape sample")
    # both streams always exist so dropout-free runs keep the same
    # candidate stream as dropout runs under one seed
    mask_rng, plan_rng = as_generator(rng).spawn(2)

    dim = params.spec.input_dim
    observed = voxelize(cloud, (dim, dim, dim), config.padding)

    if config.use_dropout:
        samples = dropoutnet.mc_samples(params, observed, n_samples, mask_rng)
    else:
        point_estimate = dropoutnet.forward(params, observed, None)
        samples = [point_estimate] * n_samples

    sample_meshes = [shape_complete_mesh(s, cloud) for s in samples]
    mean = mean_grid(samples)
    mean_mesh = shape_complete_mesh(mean, cloud)

    candidates = plan_candidates(
        mean_mesh,
        n_candidates,
        plan_rng,
        standoff_scale=config.standoff_scale,
        max_opening=config.max_opening,
    )

    G, I = len(candidates), n_samples
    eps = np.zeros((G, I))
    vv = np.zeros((G, I))
    fc = np.zeros((G, I), dtype=bool)
    for j, smesh in enumerate(sample_meshes):
        eps[:, j], vv[:, j], fc[:, j] = evaluate_grasps(
            candidates, smesh, m=config.cone_edges, mu=config.mu, seed=config.wrench_seed
        )
    table = GraspScoreTable(tuple(candidates), eps, vv, fc, tuple(range(I)))
    ranking = tuple(rank_grasps(table, config.metric))

    mean_bin = threshold(mean, 0.5)
    diagnostics = {
        "mode": "dropout-sampling" if config.use_dropout else "point-estimate",
        "n_samples": I,
        "n_candidates_requested": n_candidates,
        "n_candidates": G,
        "input_hash": cloud_hash(cloud),
        "observed_occupied": int(np.count_nonzero(observed.values)),
        "sample_jaccard_to_mean": [jaccard(threshold(s, 0.5), mean_bin) for s in samples],
    }
    return PlanResult(ranking, table, mean, tuple(samples), diagnostics)


def point_estimate_plan(
    cloud: PointCloud,
    params: dropoutnet.NetworkParams,
    n_candidates: int,
    config: PlanConfig = PlanConfig(),
    rng=0,
) -> PlanResult:
    """Plan on the single dropout-free completion (the point-estimate baseline)."""
    cfg = PlanConfig(
        padding=config.padding,
        use_dropout=False,
        metric=config.metric,
        cone_edges=config.cone_edges,
        mu=config.mu,
        standoff_scale=config.standoff_scale,
        max_opening=config.max_opening,
        wrench_seed=config.wrench_seed,
    )
    return robust_plan(cloud, params, 1, n_candidates, cfg, rng)


def cloud_hash(cloud: PointCloud) -> str:
    return hashlib.sha256(np.ascontiguousarray(cloud.points).tobytes()).hexdigest()


def write_run_artifact(result: PlanResult, config: PlanConfig, path, top_k: int = 10) -> None:
    """Self-describing JSON artifact of one planning run."""
    doc = {
        "format": "shapegrasp-run-v1",
        "config": asdict(config),
        "diagnostics": result.diagnostics,
        "ranking": [
            {"rank": i, "mean_score": score, "grasp": g.to_dict()}
            for i, (g, score) in enumerate(result.ranking[:top_k])
        ],
        "table": {
            "epsilon": result.table.epsilon.tolist(),
            "v": result.table.v.tolist(),
            "force_closure": result.table.force_closure.astype(int).tolist(),
            "sample_ids": list(result.table.sample_ids),
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
