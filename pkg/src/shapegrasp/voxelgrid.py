"""Axis-aligned occupancy grids, point-cloud voxelization, and grid math.

A grid stores one scalar in [0, 1] per cell.  Cells are cubes of edge
`resolution` meters; cell (i, j, k) spans
``origin + (i, j, k) * resolution`` to ``origin + (i+1, j+1, k+1) * resolution``
(half-open, except that points landing exactly on the outer grid face are
clamped into the last cell).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyCloud, EmptyList, NonFinite

_DEGENERATE_RESOLUTION = 1e-3  # fallback edge length for zero-extent clouds


def _frozen_array(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PointCloud:
    """A set of 3D points in meters, world frame."""

    points: np.ndarray  # (n, 3) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.isfinite(pts).all():
            raise NonFinite("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen_array(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy grid with real-valued cells in [0, 1]."""

    dims: tuple  # (nx, ny, nz), positive ints
    origin: np.ndarray  # (3,) meters
    resolution: float  # meters per voxel edge
    values: np.ndarray  # (nx, ny, nz) float64 in [0, 1]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError(f"dims must be three positive ints, got {self.dims}")
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if not np.isfinite(origin).all():
            raise NonFinite("grid origin must be finite")
        res = float(self.resolution)
        if not np.isfinite(res) or res <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != dims:
            vals = vals.reshape(dims)
        if vals.size and (vals.min() < -1e-9 or vals.max() > 1 + 1e-9):
            raise ValueError("grid values must lie in [0, 1]")
        vals = np.clip(vals, 0.0, 1.0)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", _frozen_array(origin))
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "values", _frozen_array(vals))

    @property
    def is_binary(self) -> bool:
        v = self.values
        return bool(np.all((v == 0.0) | (v == 1.0)))

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def same_frame(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and self.resolution == other.resolution
            and bool(np.array_equal(self.origin, other.origin))
        )

    def point_indices(self, points: np.ndarray) -> np.ndarray:
        """Voxel index of each point, clamped into the grid."""
        idx = np.floor((np.asarray(points, dtype=np.float64) - self.origin) / self.resolution)
        idx = idx.astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.dims) - 1)

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) world coordinates of all cell centers."""
        axes = [
            self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.resolution
            for a in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def with_values(self, values: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.dims, self.origin, self.resolution, values)


def voxelize(cloud: PointCloud, dims, padding: float = 0.1) -> VoxelGrid:
    """Binary grid over the cloud's padded bounding box.

    The box is the cloud's axis-aligned bounding box expanded by
    `padding` (a fraction of each axis extent) on each side.  The voxel
    edge is ``longest padded extent / max(dims)``, so the longest axis
    fits exactly and shorter axes are centered with slack.  A cell is 1
    iff at least one point falls inside it.
    """
    if cloud.is_empty:
        raise EmptyCloud("cannot voxelize an empty point cloud")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    dims = tuple(int(d) for d in dims)
    if any(d <= 0 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")

    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = (hi - lo) * (1.0 + 2.0 * padding)
    res = float(extent.max() / max(dims))
    if res <= 0.0:
        res = _DEGENERATE_RESOLUTION
    center = (lo + hi) / 2.0
    origin = center - np.asarray(dims) * res / 2.0

    grid = VoxelGrid(dims, origin, res, np.zeros(dims))
    idx = grid.point_indices(pts)
    values = np.zeros(dims)
    values[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return grid.with_values(values)


def _binarized(grid: VoxelGrid) -> np.ndarray:
    return grid.values >= 0.5


def jaccard(a: VoxelGrid, b: VoxelGrid) -> float:
    """Intersection-over-union of occupied cell sets (binarized at 0.5).

    Two entirely empty grids compare as 1.0.
    """
    if a.dims != b.dims:
        raise DimMismatch(f"grid dims differ: {a.dims} vs {b.dims}")
    occ_a = _binarized(a)
    occ_b = _binarized(b)
    union = np.count_nonzero(occ_a | occ_b)
    if union == 0:
        return 1.0
    inter = np.count_nonzero(occ_a & occ_b)
    return inter / union


def mean_grid(grids) -> VoxelGrid:
    """Cell-wise arithmetic mean of grids sharing one frame."""
    grids = list(grids)
    if not grids:
        raise EmptyList("mean_grid needs at least one grid")
    first = grids[0]
    for g in grids[1:]:
        if not first.same_frame(g):
            raise DimMismatch("grids do not share dims/origin/resolution")
    stacked = np.stack([g.values for g in grids])
    return first.with_values(stacked.mean(axis=0))


def threshold(grid: VoxelGrid, t: float) -> VoxelGrid:
    """Binarize: cell -> 1 iff value >= t, with t in (0, 1)."""
    t = float(t)
    if not (0.0 < t < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    return grid.with_values((grid.values >= t).astype(np.float64))


# ---------------------------------------------------------------------------
# File formats.  Documented in README ("Grid files").  Both carry a format
# tag and round-trip float64 exactly.
# ---------------------------------------------------------------------------

_TEXT_MAGIC = "shapegrasp-grid 1"


def save_grid_text(grid: VoxelGrid, path) -> None:
    """Plain-text grid container (header + row-major cell values)."""
    path = Path(path)
    nx, ny, nz = grid.dims
    lines = [
        _TEXT_MAGIC,
        f"dims {nx} {ny} {nz}",
        "origin " + " ".join(f"{v:.17g}" for v in grid.origin),
        f"resolution {grid.resolution:.17g}",
        f"binary {1 if grid.is_binary else 0}",
    ]
    flat = grid.values.reshape(-1)
    lines.extend(" ".join(f"{v:.17g}" for v in flat[i : i + nz]) for i in range(0, flat.size, nz))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_grid_text(path) -> VoxelGrid:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != _TEXT_MAGIC:
        raise ValueError(f"{path}: not a shapegrasp text grid")
    header = {}
    for line in lines[1:5]:
        key, *rest = line.split()
        header[key] = rest
    dims = tuple(int(v) for v in header["dims"])
    origin = np.array([float(v) for v in header["origin"]])
    res = float(header["resolution"][0])
    values = np.array([float(tok) for line in lines[5:] for tok in line.split()])
    return VoxelGrid(dims, origin, res, values.reshape(dims))


def save_grid_npz(grid: VoxelGrid, path) -> None:
    """Binary grid container (numpy .npz with a format tag)."""
    np.savez(
        Path(path),
        format="shapegrasp-grid-v1",
        dims=np.asarray(grid.dims, dtype=np.int64),
        origin=np.asarray(grid.origin),
        resolution=np.float64(grid.resolution),
        binary=np.bool_(grid.is_binary),
        values=np.asarray(grid.values),
    )


def load_grid_npz(path) -> VoxelGrid:
    with np.load(Path(path), allow_pickle=False) as data:
        if str(data["format"]) != "shapegrasp-grid-v1":
            raise ValueError(f"{path}: not a shapegrasp npz grid")
        return VoxelGrid(
            tuple(int(d) for d in data["dims"]),
            data["origin"],
            float(data["resolution"]),
            data["values"],
        )


def save_cloud_csv(cloud: PointCloud, path) -> None:
    """Point cloud as CSV: header line `x,y,z`, one point per row."""
    path = Path(path)
    rows = ["# shapegrasp-cloud 1", "x,y,z"]
    rows.extend(",".join(f"{v:.17g}" for v in p) for p in cloud.points)
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_cloud_csv(path) -> PointCloud:
    path = Path(path)
    pts = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("x"):
            continue
        pts.append([float(tok) for tok in line.split(",")])
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3))
