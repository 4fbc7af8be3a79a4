import numpy as np
import pytest

from shapegrasp.errors import EmptyLevelSet, NoVisibleSurface
from shapegrasp.meshing import (
    Camera,
    TriMesh,
    clamp_observed,
    depth_render,
    interpolated_normal,
    load_mesh_obj,
    load_mesh_off,
    marching_cubes,
    ray_intersect,
    ray_intersect_batch,
    save_mesh_obj,
    save_mesh_off,
    shape_complete_mesh,
)
from shapegrasp.voxelgrid import PointCloud, VoxelGrid, voxelize

from helpers import brute_force_ray_hit, point_mesh_distance


def sphere_grid(n=20, radius=0.35, res=None):
    res = 1.0 / n if res is None else res
    ax = (np.arange(n) + 0.5) * res - n * res / 2
    gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
    occ = (gx**2 + gy**2 + gz**2 <= radius**2).astype(float)
    return VoxelGrid((n, n, n), (-n * res / 2,) * 3, res, occ)


def unit_cube_mesh():
    # 2x2x2 all-ones grid at res 0.5 -> closed cube spanning [-0.5, 0.5]^3
    g = VoxelGrid((2, 2, 2), (-0.5, -0.5, -0.5), 0.5, np.ones((2, 2, 2)))
    return marching_cubes(g, 0.5)


class TestMarchingCubes:
    def test_single_interior_voxel_is_closed_and_small(self):
        vals = np.zeros((5, 5, 5))
        vals[2, 2, 2] = 1.0
        g = VoxelGrid((5, 5, 5), (0, 0, 0), 0.1, vals)
        mesh = marching_cubes(g, 0.5)
        vol = mesh.signed_volume()
        assert 0.0 < vol <= 0.1**3

    def test_all_zeros_raises_empty_level_set(self):
        g = VoxelGrid((4, 4, 4), (0, 0, 0), 1.0, np.zeros((4, 4, 4)))
        with pytest.raises(EmptyLevelSet):
            marching_cubes(g, 0.5)

    def test_block_volume_within_15_percent_of_voxel_count(self):
        vals = np.zeros((8, 8, 8))
        vals[2:6, 2:6, 2:6] = 1.0
        g = VoxelGrid((8, 8, 8), (0, 0, 0), 1.0, vals)
        mesh = marching_cubes(g, 0.5)
        analytic = 64.0  # 4^3 voxels x unit volume
        assert mesh.signed_volume() == pytest.approx(analytic, rel=0.15)

    def test_boundary_touching_region_is_still_closed(self):
        g = VoxelGrid((4, 4, 4), (0, 0, 0), 1.0, np.ones((4, 4, 4)))
        mesh = marching_cubes(g, 0.5)
        assert mesh.signed_volume() > 0
        # closed: every edge shared by exactly two triangles
        edges = {}
        for tri in mesh.triangles:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = tuple(sorted((tri[a], tri[b])))
                edges[key] = edges.get(key, 0) + 1
        assert set(edges.values()) == {2}

    def test_outward_winding_positive_volume(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            vals = (rng.random((6, 6, 6)) > 0.6).astype(float)
            vals[2:4, 2:4, 2:4] = 1.0
            g = VoxelGrid((6, 6, 6), (0, 0, 0), 0.5, vals)
            assert marching_cubes(g, 0.5).signed_volume() > 0


class TestShapeCompleteMesh:
    def test_noop_clamp_equals_plain_marching_cubes(self):
        g = sphere_grid(12)
        centers = g.cell_centers()[g.values > 0.5]
        cloud = PointCloud(centers[:20])
        m1 = shape_complete_mesh(g, cloud)
        m2 = marching_cubes(g, 0.5)
        assert np.array_equal(m1.vertices, m2.vertices)
        assert np.array_equal(m1.triangles, m2.triangles)

    def test_single_point_in_empty_grid_meshes_one_voxel(self):
        g = VoxelGrid((6, 6, 6), (0, 0, 0), 0.1, np.zeros((6, 6, 6)))
        cloud = PointCloud(np.array([[0.35, 0.35, 0.35]]))
        mesh = shape_complete_mesh(g, cloud)
        assert 0.0 < mesh.signed_volume() <= 0.1**3

    def test_observed_points_lie_near_the_surface(self):
        rng = np.random.default_rng(5)
        vals = (rng.random((8, 8, 8)) > 0.7).astype(float)
        g = VoxelGrid((8, 8, 8), (0, 0, 0), 0.1, vals)
        cloud = PointCloud(rng.uniform(0.05, 0.75, (30, 3)))
        mesh = shape_complete_mesh(g, cloud)
        diag = g.resolution * np.sqrt(3)
        for p in cloud.points:
            assert point_mesh_distance(p, mesh) <= diag + 1e-12

    def test_clamp_is_idempotent(self):
        rng = np.random.default_rng(6)
        g = VoxelGrid((6, 6, 6), (0, 0, 0), 0.2, (rng.random((6, 6, 6)) > 0.8).astype(float))
        cloud = PointCloud(rng.uniform(0.1, 1.1, (10, 3)))
        once = clamp_observed(g, cloud)
        twice = clamp_observed(once, cloud)
        assert np.array_equal(once.values, twice.values)


class TestRayIntersect:
    def test_cube_center_hits_plus_x_face_at_half(self):
        mesh = unit_cube_mesh()
        hit = ray_intersect(mesh, (0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
        assert hit is not None
        point, tri, dist = hit
        assert dist == pytest.approx(0.5, abs=1e-9)
        assert point[0] == pytest.approx(0.5, abs=1e-9)

    def test_ray_pointing_away_misses(self):
        mesh = unit_cube_mesh()
        assert ray_intersect(mesh, (2.0, 0.0, 0.0), (1.0, 0.0, 0.0)) is None

    def test_requires_unit_direction(self):
        mesh = unit_cube_mesh()
        with pytest.raises(ValueError):
            ray_intersect(mesh, (0, 0, 0), (2.0, 0.0, 0.0))

    def test_random_rays_match_brute_force(self):
        mesh = marching_cubes(sphere_grid(10), 0.5)
        rng = np.random.default_rng(0)
        n_rays = 400
        origins = rng.uniform(-1.2, 1.2, (n_rays, 3))
        dirs = rng.standard_normal((n_rays, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        hit, t, tri, _, _ = ray_intersect_batch(mesh, origins, dirs)
        for i in range(n_rays):
            oracle = brute_force_ray_hit(mesh, origins[i], dirs[i])
            assert hit[i] == (oracle is not None)
            if oracle is not None:
                assert t[i] == pytest.approx(oracle[0], abs=1e-12)
                assert tri[i] == oracle[1]

    def test_interpolated_normal_is_unit_and_outward(self):
        mesh = marching_cubes(sphere_grid(16), 0.5)
        hit, t, tri, bu, bv = ray_intersect_batch(
            mesh, np.array([[1.0, 0.0, 0.0]]), np.array([[-1.0, 0.0, 0.0]])
        )
        assert hit[0]
        n = interpolated_normal(mesh, int(tri[0]), float(bu[0]), float(bv[0]))
        assert np.linalg.norm(n) == pytest.approx(1.0)
        assert n[0] > 0.8  # outward along +x at the +x pole


class TestDepthRender:
    def test_camera_on_plus_x_sees_only_front_half(self):
        mesh = marching_cubes(sphere_grid(16), 0.5)
        cam = Camera((1.5, 0, 0), (0, 0, 0), np.pi / 3, (32, 32))
        cloud = depth_render(mesh, cam)
        assert len(cloud) > 50
        assert np.all(cloud.points[:, 0] >= -1e-9)

    def test_doubling_resolution_reproduces_existing_rays(self):
        mesh = marching_cubes(sphere_grid(12), 0.5)
        cam1 = Camera((1.4, 0.2, 0.3), (0, 0, 0), np.pi / 3, (16, 16))
        cam2 = Camera((1.4, 0.2, 0.3), (0, 0, 0), np.pi / 3, (32, 32))
        c1 = depth_render(mesh, cam1)
        c2 = depth_render(mesh, cam2)
        assert len(c2) > len(c1)
        set2 = {tuple(np.round(p, 10)) for p in c2.points}
        for p in c1.points:
            assert tuple(np.round(p, 10)) in set2

    def test_sphere_hits_lie_on_discretized_sphere(self):
        grid = sphere_grid(24, radius=0.35)
        mesh = marching_cubes(grid, 0.5)
        # discretization bound measured on the mesh itself
        vr = np.linalg.norm(mesh.vertices, axis=1)
        bound = np.abs(vr - 0.35).max() + 1e-9
        cam = Camera((1.2, -0.3, 0.4), (0, 0, 0), np.pi / 3, (24, 24))
        cloud = depth_render(mesh, cam)
        r = np.linalg.norm(cloud.points, axis=1)
        assert np.abs(r - 0.35).max() <= bound + 1e-6

    def test_no_visible_surface_raises(self):
        mesh = unit_cube_mesh()
        cam = Camera((5.0, 0, 0), (10.0, 0, 0), 0.2, (8, 8))  # looking away
        with pytest.raises(NoVisibleSurface):
            depth_render(mesh, cam)

    def test_rendered_points_revoxelize_inside_dilated_source(self):
        grid = sphere_grid(16)
        mesh = marching_cubes(grid, 0.5)
        cam = Camera((1.3, 0.1, -0.2), (0, 0, 0), np.pi / 3, (24, 24))
        cloud = depth_render(mesh, cam)
        idx = grid.point_indices(cloud.points)
        occ = grid.values > 0.5
        # dilate occupancy by one voxel
        from scipy.ndimage import binary_dilation

        dil = binary_dilation(occ, iterations=1)
        assert np.all(dil[idx[:, 0], idx[:, 1], idx[:, 2]])


class TestMeshIO:
    def test_off_roundtrip(self, tmp_path):
        mesh = marching_cubes(sphere_grid(8), 0.5)
        p = tmp_path / "m.off"
        save_mesh_off(mesh, p)
        back = load_mesh_off(p)
        assert np.allclose(back.vertices, mesh.vertices, atol=1e-10)
        assert np.array_equal(back.triangles, mesh.triangles)

    def test_obj_roundtrip(self, tmp_path):
        mesh = unit_cube_mesh()
        p = tmp_path / "m.obj"
        save_mesh_obj(mesh, p)
        back = load_mesh_obj(p)
        assert np.allclose(back.vertices, mesh.vertices, atol=1e-10)
        assert np.array_equal(back.triangles, mesh.triangles)

    def test_off_rejects_garbage(self, tmp_path):
        p = tmp_path / "m.off"
        p.write_text("PLY\n")
        with pytest.raises(ValueError):
            load_mesh_off(p)


class TestTriMesh:
    def test_degenerate_triangles_dropped(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.5, 0.5, 0.0]])
        tris = np.array([[0, 1, 2], [0, 1, 1]])  # second is zero-area
        mesh = TriMesh(verts, tris)
        assert len(mesh.triangles) == 1

    def test_volume_centroid_of_cube_is_center(self):
        mesh = unit_cube_mesh()
        assert np.allclose(mesh.volume_centroid(), [0, 0, 0], atol=1e-12)
