"""Synthetic objects, partial views, the planner comparison experiment, and
the one-sided Wilcoxon signed-rank test.

The experiment contrasts two planners on the same partial views:

* ODS: dropout sampling on (robust ranking over sampled completions)
* OD: dropout disabled at test time (point-estimate ranking)

Each method's top-ranked grasp is re-evaluated against the ground-truth
mesh, and per-split paired one-sided tests ask whether OD's ground-truth
quality is below ODS's.  Training objects are boxes, cylinders and spheres;
the holdout-model split contains capsules and two-part composites, which
the toy completion network never saw.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import dropoutnet
from .errors import TooFewPairs
from .meshing import Camera, TriMesh, depth_render, marching_cubes, clamp_observed
from .planner import PlanConfig, cloud_hash, evaluate_grasp, rank_grasps, robust_plan
from .seeding import as_generator, keyed_generator
from .voxelgrid import PointCloud, VoxelGrid, jaccard, threshold, voxelize
from .errors import NoVisibleSurface

log = logging.getLogger(__name__)

TRAIN_KINDS = ("box", "cylinder", "sphere")
HOLDOUT_KINDS = ("capsule", "composite")
SPLITS = ("training", "holdout_views", "holdout_models")


def rotation_matrix(axis_angle) -> np.ndarray:
    """Rodrigues rotation from an axis-angle 3-vector."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    k = v / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


@dataclass(frozen=True)
class ObjectSpec:
    """Analytic solid: primitive or a composite of posed primitives."""

    kind: str
    dims: tuple = ()
    position: tuple = (0.0, 0.0, 0.0)
    axis_angle: tuple = (0.0, 0.0, 0.0)
    parts: tuple = ()

    def __post_init__(self):
        if self.kind not in TRAIN_KINDS + HOLDOUT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        if self.kind == "composite":
            if not self.parts:
                raise ValueError("composite needs at least one part")
        elif not self.dims or any(d <= 0 for d in self.dims):
            raise ValueError(f"{self.kind} needs positive dims, got {self.dims}")
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "axis_angle", tuple(float(v) for v in self.axis_angle))
        object.__setattr__(self, "parts", tuple(self.parts))

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        """Boolean inside-test for world points (N, 3)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        local = (pts - np.asarray(self.position)) @ rotation_matrix(self.axis_angle)
        if self.kind == "box":
            half = np.asarray(self.dims) / 2.0
            return np.all(np.abs(local) <= half, axis=1)
        if self.kind == "cylinder":
            r, h = self.dims
            return (local[:, 0] ** 2 + local[:, 1] ** 2 <= r * r) & (np.abs(local[:, 2]) <= h / 2.0)
        if self.kind == "sphere":
            (r,) = self.dims
            return np.einsum("ij,ij->i", local, local) <= r * r
        if self.kind == "capsule":
            r, h = self.dims
            z = np.clip(local[:, 2], -h / 2.0, h / 2.0)
            d2 = local[:, 0] ** 2 + local[:, 1] ** 2 + (local[:, 2] - z) ** 2
            return d2 <= r * r
        inside = np.zeros(len(local), dtype=bool)
        for part in self.parts:
            inside |= part.occupancy(local)
        return inside

    def bound_radius(self) -> float:
        """Radius of a sphere around `position` containing the solid."""
        if self.kind == "box":
            r = float(np.linalg.norm(np.asarray(self.dims) / 2.0))
        elif self.kind == "cylinder":
            rr, h = self.dims
            r = math.hypot(rr, h / 2.0)
        elif self.kind == "sphere":
            r = self.dims[0]
        elif self.kind == "capsule":
            rr, h = self.dims
            r = h / 2.0 + rr
        else:
            r = max(np.linalg.norm(p.position) + p.bound_radius() for p in self.parts)
        return float(r)

    def to_dict(self) -> dict:
        doc = {
            "kind": self.kind,
            "dims": list(self.dims),
            "position": list(self.position),
            "axis_angle": list(self.axis_angle),
        }
        if self.parts:
            doc["parts"] = [p.to_dict() for p in self.parts]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ObjectSpec":
        return cls(
            doc["kind"],
            tuple(doc.get("dims", ())),
            tuple(doc.get("position", (0, 0, 0))),
            tuple(doc.get("axis_angle", (0, 0, 0))),
            tuple(cls.from_dict(p) for p in doc.get("parts", ())),
        )


@dataclass(frozen=True)
class SimObject:
    spec: ObjectSpec
    gt_mesh: TriMesh
    gt_grid: VoxelGrid


@dataclass(frozen=True)
class View:
    cloud: PointCloud
    camera: Camera
    object_index: int  # into the owning split's object list


def occupancy_on_frame(spec: ObjectSpec, frame: VoxelGrid) -> VoxelGrid:
    """Binary analytic occupancy sampled at another grid's cell centers."""
    centers = frame.cell_centers().reshape(-1, 3)
    vals = spec.occupancy(centers).astype(np.float64).reshape(frame.dims)
    return frame.with_values(vals)


def ground_truth_grid(spec: ObjectSpec, resolution: int = 40, padding: float = 0.1) -> VoxelGrid:
    """Cubic occupancy grid over the object's padded bounding sphere."""
    r = spec.bound_radius() * (1.0 + padding)
    center = np.asarray(spec.position)
    res = 2.0 * r / resolution
    origin = center - r
    frame = VoxelGrid((resolution,) * 3, origin, res, np.zeros((resolution,) * 3))
    return occupancy_on_frame(spec, frame)


def _random_spec(kind: str, rng) -> ObjectSpec:
    tilt = rng.uniform(0.0, 0.35, size=3)
    spin = rng.uniform(0.0, 2.0 * np.pi)
    axis_angle = (tilt[0], tilt[1], spin)
    if kind == "box":
        dims = tuple(rng.uniform(0.05, 0.14, size=3))
    elif kind == "cylinder":
        dims = (rng.uniform(0.025, 0.06), rng.uniform(0.07, 0.16))
    elif kind == "sphere":
        dims = (rng.uniform(0.035, 0.07),)
    elif kind == "capsule":
        dims = (rng.uniform(0.02, 0.045), rng.uniform(0.06, 0.13))
    else:
        return _random_composite(rng, axis_angle)
    return ObjectSpec(kind, dims, (0.0, 0.0, 0.0), axis_angle)


def _random_composite(rng, axis_angle) -> ObjectSpec:
    """Two-part solids the completion network never trained on."""
    template = rng.integers(0, 3)
    if template == 0:  # L of two boxes
        a = rng.uniform(0.05, 0.1)
        b = rng.uniform(0.1, 0.16)
        t = rng.uniform(0.03, 0.05)
        parts = (
            ObjectSpec("box", (b, t, t)),
            ObjectSpec("box", (t, t, a), position=(b / 2 - t / 2, 0.0, a / 2)),
        )
    elif template == 1:  # mushroom: cylinder stem + sphere cap
        r = rng.uniform(0.02, 0.035)
        h = rng.uniform(0.06, 0.1)
        cap = rng.uniform(0.03, 0.055)
        parts = (
            ObjectSpec("cylinder", (r, h)),
            ObjectSpec("sphere", (cap,), position=(0.0, 0.0, h / 2)),
        )
    else:  # cross of two boxes
        b = rng.uniform(0.1, 0.16)
        t = rng.uniform(0.03, 0.05)
        parts = (
            ObjectSpec("box", (b, t, t)),
            ObjectSpec("box", (t, b, t)),
        )
    return ObjectSpec("composite", (), (0.0, 0.0, 0.0), axis_angle, parts)


def gen_objects(rng, count: int, gt_resolution: int = 40):
    """(train, holdout-view, holdout-model) object sets.

    The holdout-view set reuses the training solids (novel views come from
    novel cameras later); holdout-model kinds are disjoint from training
    kinds by construction.
    """
    if count < 1:
        raise ValueError("need at least one object per split")
    gen = as_generator(rng)

    def build(kinds, n):
        out = []
        for i in range(n):
            spec = _random_spec(kinds[i % len(kinds)], gen)
            grid = ground_truth_grid(spec, gt_resolution)
            mesh = marching_cubes(grid, 0.5)
            out.append(SimObject(spec, mesh, grid))
        return out

    train = build(TRAIN_KINDS, count)
    holdout_models = build(HOLDOUT_KINDS, count)
    return train, list(train), holdout_models


def make_partial_views(objects, cameras_per_object: int, rng, resolution=(48, 48), fov=np.pi / 3, radius_scale=2.4):
    """Depth-rendered single-view clouds from random orbiting cameras."""
    objects = list(objects)
    if not objects:
        raise ValueError("need at least one object")
    gen = as_generator(rng)
    views = []
    for oi, obj in enumerate(objects):
        center = np.asarray(obj.spec.position)
        radius = obj.spec.bound_radius() * radius_scale
        for _ in range(cameras_per_object):
            d = gen.standard_normal(3)
            d /= np.linalg.norm(d)
            cam = Camera(center + radius * d, center, fov, resolution)
            try:
                cloud = depth_render(obj.gt_mesh, cam)
            except NoVisibleSurface:
                log.warning("view render failed for object %d; skipping", oi)
                continue
            views.append(View(cloud, cam, oi))
    return views


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(pairs, alternative: str = "a<b"):
    """One-sided Wilcoxon signed-rank test on paired scalars.

    `alternative="a<b"` tests whether b tends to exceed a.  Zero
    differences are dropped; tied absolute differences receive average
    ranks.  T is the rank sum of differences supporting the alternative.
    The p-value is exact (full sign enumeration) for n <= 12 and a
    tie-corrected, continuity-corrected normal approximation beyond.
    """
    if alternative not in ("a<b", "a>b"):
        raise ValueError("alternative must be 'a<b' or 'a>b'")
    arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    diff = arr[:, 1] - arr[:, 0]
    if alternative == "a>b":
        diff = -diff
    diff = diff[diff != 0.0]
    n = len(diff)
    if n < 5:
        raise TooFewPairs(f"need >= 5 non-zero differences, got {n}")
    ranks = _average_ranks(np.abs(diff))
    t_stat = float(ranks[diff > 0].sum())
    if n <= 12:
        signs = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1  # all sign vectors
        stats = signs @ ranks
        p = float(np.count_nonzero(stats >= t_stat - 1e-12) / 2.0**n)
    else:
        mean = ranks.sum() / 2.0
        sd = math.sqrt(float((ranks**2).sum()) / 4.0)
        z = (t_stat - mean - 0.5) / sd
        p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return t_stat, min(max(p, 1e-300), 1.0)


# ---------------------------------------------------------------------------
# The ODS vs OD experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    views_per_split: int = 30
    cameras_per_object: int = 1
    train_cameras_per_object: int = 4  # extra training-split views feed the network
    n_samples: int = 10
    n_candidates: int = 600
    splits: tuple = SPLITS
    mu: float = 0.5
    cone_edges: int = 8
    gt_resolution: int = 32
    cam_resolution: tuple = (48, 48)
    cam_fov: float = float(np.pi / 3)
    cam_radius_scale: float = 2.4
    padding: float = 0.3
    jobs: int = 1

    def __post_init__(self):
        unknown = set(self.splits) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown splits {sorted(unknown)}")
        if self.views_per_split < 1 or self.n_samples < 1 or self.n_candidates < 1:
            raise ValueError("views, samples, and candidates must be >= 1")
        object.__setattr__(self, "splits", tuple(self.splits))
        object.__setattr__(self, "cam_resolution", tuple(int(v) for v in self.cam_resolution))


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple  # one dict per (view, method)
    aggregates: dict  # (split, method) -> means
    tests: dict  # (split, metric) -> {T, p, n} or {skipped}
    jaccard: dict  # (split, method/baseline) -> mean jaccard
    meta: dict

    def to_dict(self) -> dict:
        return {
            "format": "shapegrasp-report-v1",
            "rows": list(self.rows),
            "aggregates": {"|".join(k): v for k, v in sorted(self.aggregates.items())},
            "tests": {"|".join(k): v for k, v in sorted(self.tests.items())},
            "jaccard": {"|".join(k): v for k, v in sorted(self.jaccard.items())},
            "meta": self.meta,
        }


def build_dataset(config: ExperimentConfig, rng=None):
    """Objects plus per-split views keyed off the experiment seed.

    The training split carries `train_cameras_per_object` views per object
    (they feed network training; the experiment evaluates on the first
    `views_per_split` of them, mirroring "views sampled from the training
    set").  The holdout-view split reuses the training objects under a
    fresh camera stream.
    """
    gen = as_generator(config.seed if rng is None else rng)
    obj_rng, *view_rngs = gen.spawn(4)
    n_objects = -(-config.views_per_split // config.cameras_per_object)
    train, hv, hm = gen_objects(obj_rng, n_objects, config.gt_resolution)
    split_objects = {"training": train, "holdout_views": hv, "holdout_models": hm}
    cams = {
        "training": max(config.cameras_per_object, config.train_cameras_per_object),
        "holdout_views": config.cameras_per_object,
        "holdout_models": config.cameras_per_object,
    }
    views = {}
    for i, name in enumerate(SPLITS):
        views[name] = make_partial_views(
            split_objects[name],
            cams[name],
            view_rngs[i],
            resolution=config.cam_resolution,
            fov=config.cam_fov,
            radius_scale=config.cam_radius_scale,
        )
    return split_objects, views


def completion_pairs(views, objects, input_dim: int, padding: float = 0.3):
    """(partial grid, complete grid) pairs for network training.

    The partial grid voxelizes the view cloud; the target is the analytic
    ground-truth occupancy sampled on the same frame.
    """
    pairs = []
    for view in views:
        observed = voxelize(view.cloud, (input_dim,) * 3, padding)
        target = occupancy_on_frame(objects[view.object_index].spec, observed)
        pairs.append((observed, target))
    return pairs


def mesh_hash(mesh: TriMesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return h.hexdigest()


def _view_task(args):
    """One paired (ODS, OD) unit of work; returns two report rows or None."""
    (split, split_idx, view_idx, cloud, spec, gt_mesh, params, config) = args
    base = PlanConfig(
        padding=config.padding,
        mu=config.mu,
        cone_edges=config.cone_edges,
    )
    gt_hash = mesh_hash(gt_mesh)
    rows = []
    try:
        dim = params.spec.input_dim
        observed = voxelize(cloud, (dim, dim, dim), config.padding)
        gt_frame = occupancy_on_frame(spec, observed)
        j_baseline = jaccard(observed, gt_frame)
        for method_idx, (method, use_dropout, n_samples) in enumerate(
            (("ODS", True, config.n_samples), ("OD", False, 1))
        ):
            # both methods share one view-level stream so a dropout-free
            # network makes them coincide exactly
            rng = keyed_generator(config.seed, split_idx, view_idx)
            cfg = replace(base, use_dropout=use_dropout)
            result = robust_plan(cloud, params, n_samples, config.n_candidates, cfg, rng)
            completed = threshold(clamp_observed(result.mean_grid, cloud), 0.5)
            j_completed = jaccard(completed, gt_frame)
            row = {
                "split": split,
                "view": view_idx,
                "object_kind": spec.kind,
                "method": method,
                "jaccard": j_completed,
                "jaccard_baseline": j_baseline,
                "gt_mesh_hash": gt_hash,
                "n_candidates": len(result.table.grasps),
            }
            for metric in ("epsilon", "v"):
                top_grasp, plan_score = rank_grasps(result.table, metric)[0]
                q = evaluate_grasp(
                    top_grasp, gt_mesh, m=config.cone_edges, mu=config.mu
                )
                row[f"chosen_{metric}"] = top_grasp.to_dict()
                row[f"plan_score_{metric}"] = plan_score
                row[f"gt_epsilon_of_{metric}_choice"] = q.epsilon
                row[f"gt_v_of_{metric}_choice"] = q.v
                row[f"gt_force_closure_of_{metric}_choice"] = q.force_closure
            rows.append(row)
    except Exception:
        log.exception("view %s/%d failed; excluded from pairing", split, view_idx)
        return None
    return rows


def run_experiment(config: ExperimentConfig, params: dropoutnet.NetworkParams, dataset=None) -> ExperimentReport:
    """Paired ODS-vs-OD comparison with ground-truth re-evaluation.

    `dataset` is (split_objects, views) from :func:`build_dataset`; it is
    built from the config seed when omitted.  Views are independent work
    units; `config.jobs` > 1 runs them in worker processes with identical
    results for any job count.
    """
    if dataset is None:
        dataset = build_dataset(config)
    split_objects, views = dataset

    tasks = []
    for split in config.splits:
        split_idx = SPLITS.index(split)
        for view_idx, view in enumerate(views[split][: config.views_per_split]):
            obj = split_objects[split][view.object_index]
            tasks.append(
                (split, split_idx, view_idx, view.cloud, obj.spec, obj.gt_mesh, params, config)
            )

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_view_task, tasks, chunksize=1))
    else:
        results = [_view_task(t) for t in tasks]

    rows = []
    for pair in results:
        if pair is not None:
            rows.extend(pair)

    aggregates = {}
    tests = {}
    jac = {}
    for split in config.splits:
        split_rows = [r for r in rows if r["split"] == split]
        for method in ("ODS", "OD"):
            sel = [r for r in split_rows if r["method"] == method]
            if sel:
                aggregates[(split, method)] = {
                    "mean_gt_epsilon": float(np.mean([r["gt_epsilon_of_epsilon_choice"] for r in sel])),
                    "mean_gt_v": float(np.mean([r["gt_v_of_v_choice"] for r in sel])),
                    "force_closure_rate": float(np.mean([r["gt_force_closure_of_epsilon_choice"] for r in sel])),
                    "n_views": len(sel),
                }
                jac[(split, method)] = float(np.mean([r["jaccard"] for r in sel]))
        if split_rows:
            jac[(split, "baseline")] = float(np.mean([r["jaccard_baseline"] for r in split_rows]))
        for metric in ("epsilon", "v"):
            key = f"gt_{metric}_of_{metric}_choice"
            od = {r["view"]: r[key] for r in split_rows if r["method"] == "OD"}
            ods = {r["view"]: r[key] for r in split_rows if r["method"] == "ODS"}
            shared = sorted(set(od) & set(ods))
            pairs = [(od[v], ods[v]) for v in shared]
            try:
                t_stat, p = wilcoxon_signed_rank(pairs, "a<b")
                tests[(split, metric)] = {"T": t_stat, "p": p, "n_pairs": len(pairs), "alternative": "OD<ODS"}
            except TooFewPairs as exc:
                tests[(split, metric)] = {"skipped": str(exc), "n_pairs": len(pairs)}

    gt_hashes = {
        split: {i: mesh_hash(obj.gt_mesh) for i, obj in enumerate(split_objects[split])}
        for split in config.splits
    }
    isolated = all(
        any(r["gt_mesh_hash"] == h for h in gt_hashes[r["split"]].values()) for r in rows
    )
    config_echo = {**asdict(config), "splits": list(config.splits), "cam_resolution": list(config.cam_resolution)}
    config_echo.pop("jobs")  # execution knob: artifacts must not depend on it
    meta = {
        "config": config_echo,
        "row_count": len(rows),
        "gt_eval_isolated": bool(isolated),
        "input_hashes": sorted({cloud_hash(v.cloud) for split in config.splits for v in views[split]}),
    }
    return ExperimentReport(tuple(rows), aggregates, tests, jac, meta)
