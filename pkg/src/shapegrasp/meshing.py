"""Triangle meshes from voxel grids, ray casting, and synthetic depth views.

Iso-surfaces are extracted with marching cubes on a grid padded by one empty
layer, so any occupied region yields a closed, consistently wound mesh.
Grid values are treated as samples at cell centers; mesh coordinates are in
the world frame of the source grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage import measure

from .errors import EmptyLevelSet, NonFinite, NoVisibleSurface
from .voxelgrid import PointCloud, VoxelGrid

_RAY_TMIN = 1e-9
_RAY_CHUNK = 512  # rays per Moller-Trumbore batch


@dataclass(frozen=True)
class TriMesh:
    """Triangle surface mesh with consistent outward winding."""

    vertices: np.ndarray  # (V, 3) meters
    triangles: np.ndarray  # (T, 3) vertex indices

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if v.size and not np.isfinite(v).all():
            raise NonFinite("mesh vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        # drop zero-area triangles
        if t.size:
            e1 = v[t[:, 1]] - v[t[:, 0]]
            e2 = v[t[:, 2]] - v[t[:, 0]]
            area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
            scale = max(float(np.abs(v).max()), 1e-300)
            t = t[area2 > 1e-14 * scale * scale]
        v.flags.writeable = False
        t = np.ascontiguousarray(t)
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def is_empty(self) -> bool:
        return self.triangles.shape[0] == 0

    def triangle_normals(self) -> np.ndarray:
        """(T, 3) unit normals following the winding order."""
        v, t = self.vertices, self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(norms, 1e-300)

    def vertex_normals(self) -> np.ndarray:
        """(V, 3) area-weighted average of incident triangle normals."""
        v, t = self.vertices, self.triangles
        face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        out = np.zeros_like(v)
        for k in range(3):
            np.add.at(out, t[:, k], face_n)
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        return out / np.maximum(norms, 1e-300)

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive for outward winding."""
        v, t = self.vertices, self.triangles
        if t.size == 0:
            return 0.0
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        return float(np.einsum("ij,ij->", a, np.cross(b, c)) / 6.0)

    def volume_centroid(self) -> np.ndarray:
        """Centroid of the enclosed volume (divergence theorem)."""
        v, t = self.vertices, self.triangles
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        det = np.einsum("ij,ij->i", a, np.cross(b, c))
        vol = det.sum() / 6.0
        if abs(vol) < 1e-300:
            return self.vertices.mean(axis=0)
        cent = ((a + b + c) / 4.0 * det[:, None]).sum(axis=0) / 6.0
        return cent / vol

    def bounding_radius(self, center=None) -> float:
        center = self.volume_centroid() if center is None else np.asarray(center)
        return float(np.linalg.norm(self.vertices - center, axis=1).max())

    def bbox_center(self) -> np.ndarray:
        return (self.vertices.min(axis=0) + self.vertices.max(axis=0)) / 2.0


@dataclass(frozen=True)
class Camera:
    """Pinhole camera for synthetic depth views."""

    position: np.ndarray  # (3,)
    look_at: np.ndarray  # (3,)
    fov: float  # vertical field of view, radians, in (0, pi)
    resolution: tuple  # (w, h), pixels

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        tgt = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        if np.allclose(pos, tgt):
            raise ValueError("camera position must differ from look_at")
        if not (0.0 < self.fov < np.pi):
            raise ValueError("fov must lie in (0, pi)")
        w, h = (int(r) for r in self.resolution)
        if w < 1 or h < 1:
            raise ValueError("resolution must be >= 1 pixel per axis")
        pos.flags.writeable = False
        tgt.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "look_at", tgt)
        object.__setattr__(self, "fov", float(self.fov))
        object.__setattr__(self, "resolution", (w, h))

    def basis(self):
        """(forward, right, up) unit vectors of the view frame."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        up_world = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.999 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, up_world)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up

    def rays(self) -> np.ndarray:
        """(w*h, 3) unit ray directions, row-major pixel order.

        Pixels are corner-aligned (parameter i/w), so doubling the
        resolution reproduces every existing ray.
        """
        w, h = self.resolution
        fwd, right, up = self.basis()
        tan_half = np.tan(self.fov / 2.0)
        aspect = w / h
        xs = (2.0 * np.arange(w) / w - 1.0) * tan_half * aspect
        ys = (1.0 - 2.0 * np.arange(h) / h) * tan_half
        gy, gx = np.meshgrid(ys, xs, indexing="ij")  # rows outer -> row-major
        dirs = fwd[None, :] + gx.reshape(-1, 1) * right[None, :] + gy.reshape(-1, 1) * up[None, :]
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def marching_cubes(grid: VoxelGrid, iso: float = 0.5) -> TriMesh:
    """Iso-surface mesh of a grid, closed and outward-wound.

    The grid is padded internally with one empty layer so occupied regions
    touching the boundary still produce watertight surfaces.
    """
    if not (0.0 < iso < 1.0):
        raise ValueError("iso must lie in (0, 1)")
    if float(grid.values.max(initial=0.0)) < iso:
        raise EmptyLevelSet("no cell straddles the iso level")
    padded = np.pad(grid.values, 1, mode="constant", constant_values=0.0)
    res = grid.resolution
    verts, faces, _, _ = measure.marching_cubes(padded, level=iso, spacing=(res, res, res))
    # padded lattice index j maps to world origin + (j - 0.5) * res
    verts = verts + (grid.origin - 0.5 * res)[None, :]
    mesh = TriMesh(verts, faces)
    if mesh.signed_volume() < 0:
        mesh = TriMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def clamp_observed(grid: VoxelGrid, cloud: PointCloud) -> VoxelGrid:
    """Set to 1 every voxel containing an observed point (idempotent)."""
    if cloud.is_empty:
        raise ValueError("clamp_observed needs a non-empty cloud")
    idx = grid.point_indices(cloud.points)
    values = np.array(grid.values)
    values[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return grid.with_values(values)


def shape_complete_mesh(grid: VoxelGrid, cloud: PointCloud) -> TriMesh:
    """Mesh of a completed shape, forced consistent with the observation.

    Voxels containing observed points are clamped to occupied before
    extraction, so every observed point lies on or within one voxel
    diagonal of the output surface.
    """
    return marching_cubes(clamp_observed(grid, cloud), iso=0.5)


def _intersect_chunk(origins, dirs, v0, e1, e2, t_max):
    """Moller-Trumbore for a chunk of rays against all triangles.

    origins, dirs: (R, 3); v0, e1, e2: (T, 3).  Returns (t (R,), tri (R,),
    u (R,), v (R,)) with t = inf on miss.
    """
    pvec = np.cross(dirs[:, None, :], e2[None, :, :])  # (R, T, 3)
    det = np.einsum("tj,rtj->rt", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = origins[:, None, :] - v0[None, :, :]
        u = np.einsum("rtj,rtj->rt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None, :, :])
        vv = np.einsum("rj,rtj->rt", dirs, qvec) * inv
        t = np.einsum("tj,rtj->rt", e2, qvec) * inv
        ok = (
            (np.abs(det) > 1e-300)
            & (u >= -1e-9)
            & (vv >= -1e-9)
            & (u + vv <= 1.0 + 1e-9)
            & (t > _RAY_TMIN)
            & (t <= t_max)
        )
    t = np.where(ok, t, np.inf)
    tri = t.argmin(axis=1)
    rr = np.arange(len(origins))
    return t[rr, tri], tri, u[rr, tri], vv[rr, tri]


def ray_intersect_batch(mesh: TriMesh, origins, dirs, t_max: float = np.inf):
    """Nearest hits for a batch of rays.

    Returns (hit (R,) bool, t (R,), tri (R,) int, bary_u (R,), bary_v (R,)).
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    R = origins.shape[0]
    if mesh.is_empty or R == 0:
        return (np.zeros(R, bool), np.full(R, np.inf), np.zeros(R, np.int64), np.zeros(R), np.zeros(R))
    v, tr = mesh.vertices, mesh.triangles
    v0 = v[tr[:, 0]]
    e1 = v[tr[:, 1]] - v0
    e2 = v[tr[:, 2]] - v0
    t_all = np.empty(R)
    tri_all = np.empty(R, dtype=np.int64)
    u_all = np.empty(R)
    v_all = np.empty(R)
    for s in range(0, R, _RAY_CHUNK):
        e = min(R, s + _RAY_CHUNK)
        t_all[s:e], tri_all[s:e], u_all[s:e], v_all[s:e] = _intersect_chunk(
            origins[s:e], dirs[s:e], v0, e1, e2, t_max
        )
    hit = np.isfinite(t_all)
    return hit, t_all, tri_all, u_all, v_all


def ray_intersect(mesh: TriMesh, origin, direction):
    """Nearest intersection of one ray, or None on miss.

    `direction` must be unit length.  Returns (point, triangle index,
    distance).
    """
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("ray direction must be normalized")
    hit, t, tri, _, _ = ray_intersect_batch(mesh, np.asarray(origin).reshape(1, 3), direction.reshape(1, 3))
    if not hit[0]:
        return None
    point = np.asarray(origin, dtype=np.float64) + t[0] * direction
    return point, int(tri[0]), float(t[0])


def interpolated_normal(mesh: TriMesh, tri_index: int, bary_u: float, bary_v: float, vertex_normals=None) -> np.ndarray:
    """Outward normal at a surface point, barycentric over vertex normals."""
    vn = mesh.vertex_normals() if vertex_normals is None else vertex_normals
    i0, i1, i2 = mesh.triangles[tri_index]
    n = (1.0 - bary_u - bary_v) * vn[i0] + bary_u * vn[i1] + bary_v * vn[i2]
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        n = mesh.triangle_normals()[tri_index]
        norm = 1.0
    return n / norm


def depth_render(mesh: TriMesh, camera: Camera) -> PointCloud:
    """Point cloud of first-surface hits, one ray per pixel.

    Row-major pixel order; self-occlusion holds by construction since only
    the nearest hit per ray is kept.  Rays whose pixel falls outside the
    projected vertex bounding box cannot hit and are skipped, and for a
    camera outside the mesh only front-facing triangles can own a first
    hit, so back faces are culled.
    """
    if mesh.is_empty:
        raise ValueError("cannot render an empty mesh")
    dirs = camera.rays()

    front = _front_facing_submesh(mesh, camera.position)
    keep = _rays_in_projected_bbox(mesh.vertices, camera)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise NoVisibleSurface("no camera ray hit the mesh")
    origins = np.broadcast_to(camera.position, (idx.size, 3))
    hit, t, _, _, _ = ray_intersect_batch(front, origins, dirs[idx])
    if not hit.any():
        raise NoVisibleSurface("no camera ray hit the mesh")
    sel = idx[hit]
    pts = camera.position[None, :] + t[hit, None] * dirs[sel]
    return PointCloud(pts)


def _front_facing_submesh(mesh: TriMesh, eye: np.ndarray) -> TriMesh:
    n = mesh.triangle_normals()
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    facing = np.einsum("ij,ij->i", n, eye[None, :] - v0) > 0.0
    return TriMesh(mesh.vertices, mesh.triangles[facing])


def _rays_in_projected_bbox(vertices: np.ndarray, camera: Camera) -> np.ndarray:
    """Pixel mask covering the perspective projection of all vertices.

    The image of any surface point lies inside the convex hull of the
    projected vertices, so pixels outside their bounding box (plus one
    pixel of slack) certifiably miss.
    """
    w, h = camera.resolution
    fwd, right, up = camera.basis()
    rel = vertices - camera.position
    z = rel @ fwd
    if (z <= 0).any():  # vertex behind the camera: fall back to all rays
        return np.ones(w * h, dtype=bool)
    tan_half = np.tan(camera.fov / 2.0)
    aspect = w / h
    ndc_x = (rel @ right) / (z * tan_half * aspect)
    ndc_y = (rel @ up) / (z * tan_half)
    # pixel i has ndc_x = 2 i / w - 1; invert and pad by one pixel
    i_lo = max(0, int(np.floor((ndc_x.min() + 1.0) / 2.0 * w)) - 1)
    i_hi = min(w - 1, int(np.ceil((ndc_x.max() + 1.0) / 2.0 * w)) + 1)
    j_lo = max(0, int(np.floor((1.0 - ndc_y.max()) / 2.0 * h)) - 1)
    j_hi = min(h - 1, int(np.ceil((1.0 - ndc_y.min()) / 2.0 * h)) + 1)
    mask = np.zeros((h, w), dtype=bool)
    if i_lo <= i_hi and j_lo <= j_hi:
        mask[j_lo : j_hi + 1, i_lo : i_hi + 1] = True
    return mask.reshape(-1)


# ---------------------------------------------------------------------------
# Mesh I/O: ASCII OFF and OBJ, >= 9 significant digits for round-tripping.
# ---------------------------------------------------------------------------


def save_mesh_off(mesh: TriMesh, path) -> None:
    path = Path(path)
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines.extend(" ".join(f"{c:.12g}" for c in v) for v in mesh.vertices)
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mesh_off(path) -> TriMesh:
    path = Path(path)
    tokens = path.read_text(encoding="utf-8").split()
    if tokens[0] != "OFF":
        raise ValueError(f"{path}: not an OFF file")
    nv, nt = int(tokens[1]), int(tokens[2])
    cursor = 4
    verts = np.array([float(x) for x in tokens[cursor : cursor + 3 * nv]]).reshape(nv, 3)
    cursor += 3 * nv
    tris = []
    for _ in range(nt):
        k = int(tokens[cursor])
        if k != 3:
            raise ValueError(f"{path}: only triangle faces are supported")
        tris.append([int(x) for x in tokens[cursor + 1 : cursor + 4]])
        cursor += 1 + k
    return TriMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def save_mesh_obj(mesh: TriMesh, path) -> None:
    path = Path(path)
    lines = [f"v {v[0]:.12g} {v[1]:.12g} {v[2]:.12g}" for v in mesh.vertices]
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mesh_obj(path) -> TriMesh:
    path = Path(path)
    verts, tris = [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
            tris.append(idx)
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))
