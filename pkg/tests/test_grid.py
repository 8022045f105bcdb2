import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semgrid.association import SemanticPointCloud
from semgrid.errors import DegenerateEvidence, OutOfWorldWarning
from semgrid.geometry import Pose, RigidTransform, SensorRig
from semgrid.grid import (
    ConfusionMatrix,
    GridMapConfig,
    IntensityPrior,
    ProbGrid,
    SemanticMap,
    crop_ego,
    intensity_bin,
    integrate,
    render,
    update_cell,
)

RIG = SensorRig(())
ORIGIN = Pose(0.0, RigidTransform.identity())


def spc(xy, classes, intensity=None):
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    n = len(xy)
    return SemanticPointCloud(
        np.c_[xy, np.zeros(n)],
        np.asarray(classes, dtype=np.int64),
        np.full(n, 0.5) if intensity is None else np.asarray(intensity, dtype=np.float64),
        np.zeros(n, dtype=np.int64),
        ("cam0",),
    )


def small_config(**kw):
    kw.setdefault("num_classes", 3)
    return GridMapConfig((0.0, 0.0, 10.0, 10.0), ego_extent=(2.0, 2.0, 1.0, 1.0), **kw)


def random_cm(rng, c):
    m = rng.uniform(0.05, 1.0, (c, c))
    return ConfusionMatrix(m / m.sum(axis=0))


class TestTypes:
    def test_column_stochastic_validation(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.array([[0.9, 0.2], [0.2, 0.8]]))
        with pytest.raises(ValueError):
            IntensityPrior(np.array([[1.2, 0.5], [-0.2, 0.5]]))

    def test_config_geometry(self):
        cfg = GridMapConfig((-10.0, -5.0, 10.0, 5.0))
        assert cfg.world_shape == (100, 50)
        assert cfg.ego_shape == (300, 150)
        ix, iy, inside = cfg.world_index(np.array([-10.0, 9.99, 10.0]), np.array([-5.0, 0.0, 0.0]))
        assert ix.tolist()[:2] == [0, 99] and iy.tolist()[:2] == [0, 25]
        assert inside.tolist() == [True, True, False]
        with pytest.raises(ValueError):
            GridMapConfig((0.0, 0.0, 0.0, 1.0))
        with pytest.raises(ValueError):
            GridMapConfig((0.0, 0.0, 1.0, 1.0), num_classes=1)

    def test_intensity_bins(self):
        assert intensity_bin(np.array([0.0, 0.124, 0.125, 0.999, 1.0]), 8).tolist() == [0, 0, 1, 7, 7]


class TestUpdateCell:
    def test_identity_gives_one_hot(self):
        post = update_cell(np.full(4, 0.25), 2, 0, ConfusionMatrix.identity(4), IntensityPrior.uniform(8, 4))
        np.testing.assert_array_equal(post, [0, 0, 1, 0])

    def test_uninformative_fixpoint(self):
        prior = np.array([0.1, 0.6, 0.3])
        post = update_cell(prior, 1, 3, ConfusionMatrix.uniform(3), IntensityPrior.uniform(8, 3))
        np.testing.assert_allclose(post, prior, atol=1e-12, rtol=0)

    def test_two_class_hand_case(self):
        cm = ConfusionMatrix(np.array([[0.9, 0.2], [0.1, 0.8]]))
        post = update_cell([0.5, 0.5], 0, 0, cm, IntensityPrior.uniform(4, 2))
        np.testing.assert_allclose(post, [9 / 11, 2 / 11], atol=1e-12, rtol=0)

    def test_intensity_factor_applies(self):
        ip = IntensityPrior(np.array([[0.9, 0.3], [0.1, 0.7]]))
        post = update_cell([0.5, 0.5], 0, 0, ConfusionMatrix.uniform(2), ip)
        np.testing.assert_allclose(post, [0.75, 0.25], atol=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateEvidence):
            update_cell([1.0, 0.0], 1, 0, ConfusionMatrix.identity(2), IntensityPrior.uniform(2, 2))
        with pytest.raises(ValueError):
            update_cell([0.5, 0.6], 0, 0, ConfusionMatrix.identity(2), IntensityPrior.uniform(2, 2))


def fraction_posterior(prior, labels, bins, cm, ip):
    """Exact rational sequential Bayes oracle."""
    post = [Fraction(p) for p in prior]
    for z, b in zip(labels, bins):
        post = [p * Fraction(cm[z][c]) * Fraction(ip[b][c]) for c, p in enumerate(post)]
        total = sum(post)
        post = [p / total for p in post]
    return [float(p) for p in post]


class TestIntegrate:
    def test_empty_cloud_is_noop(self):
        g = ProbGrid(small_config())
        integrate(g, SemanticPointCloud.empty(), ORIGIN, RIG)
        assert g.tiles == {} and g.observed_count == 0

    def test_single_point_identity(self):
        g = ProbGrid(small_config(), ConfusionMatrix.identity(3))
        integrate(g, spc([[1.05, 2.05]], [2]), ORIGIN, RIG)
        assert render(g)[5, 10] == 2
        assert g.is_observed(5, 10) and g.observed_count == 1

    def test_twenty_points_match_sequential_oracle(self):
        cm = np.array([[0.8, 0.2], [0.2, 0.8]])
        labels = [1] * 16 + [0] * 4
        np.random.default_rng(0).shuffle(labels)
        g = ProbGrid(small_config(num_classes=2), ConfusionMatrix(cm))
        integrate(g, spc(np.tile([3.3, 4.4], (20, 1)), labels), ORIGIN, RIG)
        ix, iy, _ = g.config.world_index(3.3, 4.4)
        post = g.probs(int(ix), int(iy))
        oracle = fraction_posterior([0.5, 0.5], labels, [4] * 20, cm, np.full((8, 2), 0.125))
        np.testing.assert_allclose(post, oracle, atol=1e-12, rtol=0)
        assert np.argmax(post) == 1

    def test_pose_and_mount_are_applied(self):
        cfg = small_config()
        g = ProbGrid(cfg, ConfusionMatrix.identity(3))
        rig = SensorRig((), RigidTransform.from_translation((1.0, 0.0, 1.8)))
        pose = Pose(0.0, RigidTransform.from_yaw(np.pi / 2, (5.0, 5.0, 0.0)))
        integrate(g, spc([[2.0, 0.0]], [1]), pose, rig)
        # LiDAR (2,0) -> vehicle (3,0) -> world (5,8).
        assert render(g)[25, 40] == 1

    def test_out_of_extent_counted(self):
        g = ProbGrid(small_config())
        integrate(g, spc([[-1.0, 1.0], [1.0, 11.0], [1.0, 1.0]], [1, 1, 1]), ORIGIN, RIG)
        assert g.out_of_extent_count == 2 and g.observed_count == 1

    def test_degenerate_points_skipped_and_counted(self):
        g = ProbGrid(small_config(), ConfusionMatrix.identity(3))
        integrate(g, spc([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]], [1, 2, 1]), ORIGIN, RIG)
        assert g.degenerate_count == 1
        np.testing.assert_array_equal(g.probs(5, 5), [0, 1, 0])
        g2 = ProbGrid(small_config(), ConfusionMatrix.identity(3))
        integrate(g2, spc([[1.0, 1.0]], [1]), ORIGIN, RIG)
        integrate(g2, spc([[1.0, 1.0]], [0]), ORIGIN, RIG)
        assert g2.degenerate_count == 1 and render(g2)[5, 5] == 1

    def test_unobserved_cells_are_uniform_and_sparse(self):
        g = ProbGrid(GridMapConfig((0.0, 0.0, 1000.0, 1000.0), num_classes=4), tile_size=64)
        integrate(g, spc([[500.0, 500.0]], [3]), ORIGIN, RIG)
        assert len(g.tiles) == 1
        np.testing.assert_allclose(g.probs(0, 0), 0.25)
        np.testing.assert_allclose(g.probs(2500, 2501), 0.25)


class TestRender:
    def test_fresh_grid_is_unknown(self):
        assert not render(ProbGrid(small_config())).any()

    def test_argmax_and_ties(self):
        g = ProbGrid(small_config())
        g.set_log_probs(0, 0, np.log([0.1, 0.7, 0.2]))
        g.set_log_probs(0, 1, np.log([0.5, 0.5, 1e-300]))
        g.set_log_probs(0, 2, np.log([0.2, 0.4, 0.4]))
        assert render(g)[0, :3].tolist() == [1, 0, 1]


class TestCropEgo:
    def test_uniform_region(self):
        g = ProbGrid(small_config(), ConfusionMatrix.identity(3))
        xs, ys = np.meshgrid(np.arange(0.1, 10, 0.2), np.arange(0.1, 10, 0.2))
        integrate(g, spc(np.c_[xs.ravel(), ys.ravel()], np.full(xs.size, 2)), ORIGIN, RIG)
        sm = crop_ego(g, Pose(0.0, RigidTransform.from_translation((5.0, 5.0, 0.0))))
        assert sm.shape == (20, 10)
        assert (sm.classes == 2).all() and sm.observed.all()

    def test_rotation_turns_boundary(self):
        # World: class 1 where x < 5 and class 2 where x >= 5.
        g = ProbGrid(small_config(), ConfusionMatrix.identity(3))
        xs, ys = np.meshgrid(np.arange(0.1, 10, 0.2), np.arange(0.1, 10, 0.2))
        xs, ys = xs.ravel(), ys.ravel()
        integrate(g, spc(np.c_[xs, ys], np.where(xs < 5, 1, 2)), ORIGIN, RIG)
        centre = (5.0, 5.0, 0.0)
        ahead = crop_ego(g, Pose(0.0, RigidTransform.from_translation(centre)))
        # Facing +x: front half (top rows) is class 2, back half class 1.
        assert (ahead.classes[:10] == 2).all() and (ahead.classes[10:] == 1).all()
        turned = crop_ego(g, Pose(0.0, RigidTransform.from_yaw(np.pi / 2, centre)))
        # Facing +y: world +x is on the vehicle's right, i.e. the right columns.
        assert (turned.classes[:, 5:] == 2).all() and (turned.classes[:, :5] == 1).all()

    def test_out_of_world_warns(self):
        g = ProbGrid(small_config())
        with pytest.warns(OutOfWorldWarning):
            sm = crop_ego(g, Pose(0.0, RigidTransform.from_translation((0.5, 0.5, 0.0))))
        assert (sm.classes == 0).all()

    def test_cell_coordinates(self):
        sm = SemanticMap(np.zeros((300, 150), dtype=np.uint8), 0.2)
        x, y = sm.cell_to_ego(0, 0)
        assert (x, y) == pytest.approx((29.9, 14.9))
        r, c = sm.ego_to_cell(x, y)
        assert (r, c) == pytest.approx((0.0, 0.0))

    def test_no_warning_inside(self):
        g = ProbGrid(small_config())
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            crop_ego(g, Pose(0.0, RigidTransform.from_translation((5.0, 5.0, 0.0))))


posteriors = st.integers(0, 2**31 - 1)


class TestInvariants:
    @given(posteriors)
    @settings(max_examples=60)
    def test_normalization_after_updates(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 7))
        g = ProbGrid(small_config(num_classes=c), random_cm(rng, c), random_ip(rng, c))
        n = 200
        pts = rng.uniform(0, 1.0, (n, 2))  # 5x5 cells
        integrate(g, spc(pts, rng.integers(0, c, n), rng.uniform(0, 1, n)), ORIGIN, RIG)
        for _, _, lp in g.iter_observed():
            assert abs(np.exp(lp).sum() - 1.0) < 1e-9

    @given(posteriors)
    @settings(max_examples=60)
    def test_order_invariance(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 7))
        cm, ip = random_cm(rng, c), random_ip(rng, c)
        n = 60
        pts = rng.uniform(0, 0.6, (n, 2))
        z, i = rng.integers(0, c, n), rng.uniform(0, 1, n)
        a = ProbGrid(small_config(num_classes=c), cm, ip)
        integrate(a, spc(pts, z, i), ORIGIN, RIG)
        perm = rng.permutation(n)
        b = ProbGrid(small_config(num_classes=c), cm, ip)
        # Permuted and split across two sweeps.
        integrate(b, spc(pts[perm[:20]], z[perm[:20]], i[perm[:20]]), ORIGIN, RIG)
        integrate(b, spc(pts[perm[20:]], z[perm[20:]], i[perm[20:]]), ORIGIN, RIG)
        for ix, iy, lp in a.iter_observed():
            np.testing.assert_allclose(b.log_probs(ix, iy), lp, atol=1e-9, rtol=0)

    @given(posteriors)
    @settings(max_examples=40)
    def test_uninformative_fixpoint(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 7))
        prior = rng.dirichlet(np.ones(c))
        g = ProbGrid(small_config(num_classes=c), ConfusionMatrix.uniform(c), IntensityPrior.uniform(8, c))
        g.set_log_probs(0, 0, np.log(prior))
        integrate(g, spc(np.full((25, 2), 0.1), rng.integers(0, c, 25), rng.uniform(0, 1, 25)), ORIGIN, RIG)
        np.testing.assert_allclose(g.probs(0, 0), prior, atol=1e-12, rtol=0)


def random_ip(rng, c, bins=8):
    m = rng.uniform(0.05, 1.0, (bins, c))
    return IntensityPrior(m / m.sum(axis=0))
