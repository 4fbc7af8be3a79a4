import numpy as np
import pytest

from shapegrasp import dropoutnet
from shapegrasp.errors import TooFewPairs
from shapegrasp.simlab import (
    ExperimentConfig,
    ObjectSpec,
    build_dataset,
    completion_pairs,
    gen_objects,
    ground_truth_grid,
    make_partial_views,
    occupancy_on_frame,
    run_experiment,
    wilcoxon_signed_rank,
)
from shapegrasp.voxelgrid import jaccard, voxelize

from helpers import wilcoxon_exact_enumeration


class TestObjectSpec:
    def test_sphere_occupancy(self):
        s = ObjectSpec("sphere", (0.05,))
        pts = np.array([[0, 0, 0], [0.04, 0, 0], [0.06, 0, 0]])
        assert list(s.occupancy(pts)) == [True, True, False]

    def test_rotation_moves_box(self):
        s = ObjectSpec("box", (0.1, 0.02, 0.02), axis_angle=(0, 0, np.pi / 2))
        # long axis now along y
        assert s.occupancy(np.array([[0.0, 0.04, 0.0]]))[0]
        assert not s.occupancy(np.array([[0.04, 0.0, 0.0]]))[0]

    def test_composite_union(self):
        s = ObjectSpec(
            "composite",
            parts=(
                ObjectSpec("sphere", (0.03,)),
                ObjectSpec("sphere", (0.03,), position=(0.1, 0, 0)),
            ),
        )
        pts = np.array([[0, 0, 0], [0.1, 0, 0], [0.05, 0, 0]])
        assert list(s.occupancy(pts)) == [True, True, False]

    def test_dict_roundtrip_with_parts(self):
        s = ObjectSpec(
            "composite",
            axis_angle=(0.1, 0.2, 0.3),
            parts=(ObjectSpec("cylinder", (0.02, 0.08)), ObjectSpec("sphere", (0.03,), position=(0, 0, 0.05))),
        )
        back = ObjectSpec.from_dict(s.to_dict())
        assert back == s

    def test_bound_radius_contains_solid(self):
        rng = np.random.default_rng(0)
        for kind in ("box", "cylinder", "sphere", "capsule"):
            from shapegrasp.simlab import _random_spec

            s = _random_spec(kind, rng)
            r = s.bound_radius()
            pts = rng.uniform(-2 * r, 2 * r, (500, 3))
            inside = s.occupancy(pts)
            assert np.all(np.linalg.norm(pts[inside], axis=1) <= r + 1e-9)


class TestGenObjects:
    def test_sphere_grid_volume_matches_analytic(self):
        s = ObjectSpec("sphere", (0.05,))
        g = ground_truth_grid(s, 40)
        measured = g.values.sum() * g.resolution**3
        analytic = 4.0 / 3.0 * np.pi * 0.05**3
        assert measured == pytest.approx(analytic, rel=0.10)

    def test_same_seed_identical_splits(self):
        a = gen_objects(5, 4, gt_resolution=16)
        b = gen_objects(5, 4, gt_resolution=16)
        for sa, sb in zip(a, b):
            for oa, ob in zip(sa, sb):
                assert oa.spec == ob.spec
                assert np.array_equal(oa.gt_grid.values, ob.gt_grid.values)

    def test_holdout_kinds_disjoint_from_training(self):
        train, hv, hm = gen_objects(7, 6, gt_resolution=16)
        train_kinds = {o.spec.kind for o in train}
        hm_kinds = {o.spec.kind for o in hm}
        assert train_kinds & hm_kinds == set()
        # holdout views reuse training solids
        assert [o.spec for o in hv] == [o.spec for o in train]


@pytest.fixture(scope="module")
def view_objects():
    train, _, _ = gen_objects(3, 3, gt_resolution=24)
    return train


class TestPartialViews:

    def test_convex_object_views_are_one_sided(self):
        train, _, _ = gen_objects(11, 3, gt_resolution=24)
        sphere = next(o for o in train if o.spec.kind == "sphere")
        views = make_partial_views([sphere], 3, 13)
        for v in views:
            cam_dir = np.asarray(v.camera.position) - 0.0
            cam_dir = cam_dir / np.linalg.norm(cam_dir)
            # all hit points on the camera-facing half (small tolerance for
            # mesh discretization)
            assert np.min(v.cloud.points @ cam_dir) > -0.2 * sphere.spec.bound_radius()

    def test_two_opposite_cameras_beat_single_view(self, view_objects):
        from shapegrasp.meshing import Camera, depth_render
        from shapegrasp.voxelgrid import PointCloud

        obj = view_objects[0]
        r = obj.spec.bound_radius() * 2.4
        cam1 = Camera((r, 0, 0), (0, 0, 0), np.pi / 3, (32, 32))
        cam2 = Camera((-r, 0, 0), (0, 0, 0), np.pi / 3, (32, 32))
        c1 = depth_render(obj.gt_mesh, cam1)
        c2 = depth_render(obj.gt_mesh, cam2)
        union = PointCloud(np.vstack([c1.points, c2.points]))
        dims = (16, 16, 16)

        def jac(cloud):
            grid = voxelize(cloud, dims, 0.1)
            return jaccard(grid, occupancy_on_frame(obj.spec, grid))

        assert jac(union) > jac(c1)
        assert jac(union) > jac(c2)

    def test_views_deterministic_per_seed(self, view_objects):
        v1 = make_partial_views(view_objects, 2, 21)
        v2 = make_partial_views(view_objects, 2, 21)
        assert len(v1) == len(v2) == 6
        for a, b in zip(v1, v2):
            assert np.array_equal(a.cloud.points, b.cloud.points)


class TestWilcoxon:
    def test_all_equal_pairs_raise(self):
        with pytest.raises(TooFewPairs):
            wilcoxon_signed_rank([(1.0, 1.0)] * 8)

    def test_six_positive_differences_exact(self):
        pairs = [(0.0, i + 1.0) for i in range(6)]
        t, p = wilcoxon_signed_rank(pairs, "a<b")
        assert t == 21.0
        assert p == 0.015625

    def test_exact_path_matches_enumeration_oracle(self):
        rng = np.random.default_rng(6)
        for n in range(5, 11):
            for _ in range(3):
                a = rng.normal(size=n)
                b = a + rng.normal(size=n) * 0.8
                pairs = list(zip(a, b))
                t1, p1 = wilcoxon_signed_rank(pairs)
                t2, p2 = wilcoxon_exact_enumeration(pairs)
                assert t1 == pytest.approx(t2)
                assert p1 == pytest.approx(p2, abs=1e-12)

    def test_swapping_pairs_mirrors_the_test(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=8)
        b = a + rng.normal(size=8)
        t1, p1 = wilcoxon_signed_rank(list(zip(a, b)), "a<b")
        t_sw, p_sw = wilcoxon_signed_rank(list(zip(b, a)), "a<b")
        # consistency with enumeration on the swapped data
        t_or, p_or = wilcoxon_exact_enumeration(list(zip(b, a)))
        assert t_sw == pytest.approx(t_or)
        assert p_sw == pytest.approx(p_or, abs=1e-12)
        # the two tails overlap on ties only: p + p_swap >= 1 always fails;
        # instead they relate through the rank sum: T + T_swap = n(n+1)/2
        n = 8
        assert t1 + t_sw == pytest.approx(n * (n + 1) / 2)

    def test_exact_and_normal_paths_agree_at_boundary(self):
        rng = np.random.default_rng(8)
        import shapegrasp.simlab as sl

        for _ in range(10):
            a = rng.normal(size=12)
            b = a + rng.normal(size=12)
            pairs = list(zip(a, b))
            _, p_exact = wilcoxon_signed_rank(pairs)
            # force the normal path by enlarging with a no-op: compute the
            # approximation manually on the same ranks
            diff = b - a
            diff = diff[diff != 0]
            ranks = sl._average_ranks(np.abs(diff))
            t = ranks[diff > 0].sum()
            import math

            mean = ranks.sum() / 2
            sd = math.sqrt((ranks**2).sum() / 4)
            p_norm = 0.5 * math.erfc((t - mean - 0.5) / sd / math.sqrt(2))
            assert p_exact == pytest.approx(p_norm, abs=0.02)

    def test_ties_get_average_ranks(self):
        pairs = [(0, 1.0), (0, 1.0), (0, -1.0), (0, 2.0), (0, 2.0), (0, 3.0)]
        t, p = wilcoxon_signed_rank(pairs)
        # |d| ranks: 1,1,1 -> 2.0 each; 2,2 -> 4.5 each; 3 -> 6
        assert t == pytest.approx(2.0 + 2.0 + 4.5 + 4.5 + 6.0)


@pytest.fixture(scope="module")
def mini_world():
    cfg = ExperimentConfig(
        seed=77,
        views_per_split=3,
        cameras_per_object=1,
        train_cameras_per_object=2,
        n_samples=3,
        n_candidates=40,
        splits=("holdout_models",),
        gt_resolution=20,
        cam_resolution=(32, 32),
    )
    dataset = build_dataset(cfg)
    spec = dropoutnet.default_spec(16, 0.2)
    pairs = completion_pairs(dataset[1]["training"], dataset[0]["training"], 16)
    params = dropoutnet.train(pairs, spec, dropoutnet.TrainConfig(epochs=4, seed=1))
    return cfg, dataset, params


class TestRunExperiment:
    def test_row_bookkeeping(self, mini_world):
        cfg, dataset, params = mini_world
        report = run_experiment(cfg, params, dataset)
        assert report.meta["row_count"] == 2 * 3  # methods x views
        methods = {r["method"] for r in report.rows}
        assert methods == {"ODS", "OD"}
        assert report.meta["gt_eval_isolated"] is True

    def test_paired_views_present_for_both_methods(self, mini_world):
        cfg, dataset, params = mini_world
        report = run_experiment(cfg, params, dataset)
        by_view = {}
        for r in report.rows:
            by_view.setdefault(r["view"], set()).add(r["method"])
        assert all(v == {"ODS", "OD"} for v in by_view.values())

    def test_dropout_free_network_makes_methods_identical(self, mini_world):
        cfg, dataset, _ = mini_world
        spec0 = dropoutnet.default_spec(16, 0.0)
        params0 = dropoutnet.init_params(spec0, 3)
        report = run_experiment(cfg, params0, dataset)
        ods = {r["view"]: r for r in report.rows if r["method"] == "ODS"}
        od = {r["view"]: r for r in report.rows if r["method"] == "OD"}
        for v in ods:
            for key in ("gt_epsilon_of_epsilon_choice", "gt_v_of_v_choice", "jaccard"):
                assert ods[v][key] == od[v][key]
            assert ods[v]["chosen_epsilon"] == od[v]["chosen_epsilon"]
        for key, t in report.tests.items():
            assert "skipped" in t

    def test_jobs_do_not_change_results(self, mini_world):
        from dataclasses import replace

        cfg, dataset, params = mini_world
        r1 = run_experiment(cfg, params, dataset)
        r2 = run_experiment(replace(cfg, jobs=2), params, dataset)
        assert r1.to_dict() == r2.to_dict()
