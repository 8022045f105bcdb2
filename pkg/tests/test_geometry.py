import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from semgrid.errors import BehindCamera, InvalidTransform, NonPositiveDepth, OutOfBounds
from semgrid.geometry import (
    Camera,
    CameraIntrinsics,
    RigidTransform,
    SensorRig,
    back_project,
    compose,
    invert,
    pixel_index,
    project_point,
    project_points,
    rotation_error,
)

K = CameraIntrinsics(100.0, 100.0, 320.0, 240.0, 640, 480)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_transform(rng):
    return RigidTransform(Rotation.random(random_state=rng.integers(2**31)).as_matrix(), rng.normal(size=3) * 5)


def rz(deg, t=(0.0, 0.0, 0.0)):
    return RigidTransform.from_yaw(np.radians(deg), t)


class TestRigidTransform:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidTransform):
            RigidTransform(np.diag([1.0, 1.0, 1.1]), np.zeros(3))
        with pytest.raises(InvalidTransform):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # reflection
        with pytest.raises(InvalidTransform):
            RigidTransform(np.eye(3), [0.0, np.nan, 0.0])

    def test_immutable(self):
        t = RigidTransform.from_translation((1, 2, 3))
        with pytest.raises(ValueError):
            t.translation[0] = 5.0

    def test_compose_identity(self):
        i = RigidTransform.identity()
        assert compose(i, i).allclose(i)

    def test_compose_hand_example(self):
        # Rz(90) t=(1,0,0) after Rz(90) t=0 is Rz(180) t=(1,0,0), multiplied out by hand.
        out = compose(rz(90, (1.0, 0.0, 0.0)), rz(90))
        np.testing.assert_allclose(out.rotation, [[-1, 0, 0], [0, -1, 0], [0, 0, 1]], atol=1e-15)
        np.testing.assert_allclose(out.translation, [1.0, 0.0, 0.0], atol=1e-15)

    def test_compose_order_applies_b_first(self):
        a, b = rz(90), RigidTransform.from_translation((1.0, 0.0, 0.0))
        np.testing.assert_allclose(compose(a, b).apply([0.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)
        assert compose(a, b).allclose(a @ b)

    def test_invert_translation(self):
        np.testing.assert_array_equal(invert(RigidTransform.from_translation((1, 2, 3))).translation, [-1, -2, -3])
        assert invert(RigidTransform.identity()).allclose(RigidTransform.identity())

    @given(seeds)
    def test_inverse_laws(self, seed):
        t = random_transform(np.random.default_rng(seed))
        assert compose(t, invert(t)).allclose(RigidTransform.identity(), atol=1e-12)
        assert invert(invert(t)).allclose(t, atol=1e-12)

    def test_matrix_round_trip(self):
        t = random_transform(np.random.default_rng(3))
        assert RigidTransform.from_matrix(t.as_matrix()).allclose(t, atol=0)
        assert RigidTransform.from_matrix(t.as_matrix().ravel()).allclose(t, atol=0)
        bad = t.as_matrix()
        bad[3, 0] = 1.0
        with pytest.raises(InvalidTransform):
            RigidTransform.from_matrix(bad)

    def test_quaternion_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            t = random_transform(rng)
            q = t.as_quaternion()
            assert q[3] >= 0
            assert RigidTransform.from_quaternion(q, t.translation).allclose(t, atol=1e-12)

    def test_quaternion_validation(self):
        with pytest.raises(InvalidTransform):
            RigidTransform.from_quaternion([0, 0, 0, 0], [0, 0, 0])

    def test_orthonormality_over_long_chains(self):
        # 10^6 compositions; drift beyond tolerance triggers re-orthonormalization.
        rng = np.random.default_rng(0)
        pool = [random_transform(rng) for _ in range(997)]
        acc = RigidTransform.identity()
        worst = 0.0
        for k in range(1_000_000):
            acc = compose(acc, pool[k % 997])
            if k % 1000 == 0:
                acc = invert(acc)
                worst = max(worst, rotation_error(acc))
        worst = max(worst, rotation_error(acc))
        assert worst < 1e-9
        assert abs(np.linalg.det(acc.rotation) - 1.0) < 1e-9


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 10, 10)
        with pytest.raises(ValueError):
            CameraIntrinsics(1.0, 1.0, 10.0, 0.0, 10, 10)  # cx must be < width

    def test_from_fov(self):
        k = CameraIntrinsics.from_fov(640, 480, 90.0)
        assert k.fx == pytest.approx(320.0)  # (w / 2) / tan(45 deg)
        assert k.cx == pytest.approx(319.5)
        np.testing.assert_allclose(k.matrix, [[k.fx, 0, k.cx], [0, k.fy, k.cy], [0, 0, 1]])


class TestProjection:
    def test_optical_axis(self):
        k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 1, 1)
        assert project_point(k, RigidTransform.identity(), (0.0, 0.0, 1.0)) == (0.0, 0.0, 1.0)

    def test_hand_example(self):
        # u = 100 * 1/4 + 320, v = 100 * 2/4 + 240
        assert project_point(K, RigidTransform.identity(), (1.0, 2.0, 4.0)) == (345.0, 290.0, 4.0)

    def test_back_project_hand_example(self):
        np.testing.assert_allclose(back_project(K, RigidTransform.identity(), 345.0, 290.0, 4.0), [1, 2, 4])
        np.testing.assert_allclose(back_project(K, RigidTransform.identity(), K.cx, K.cy, 1.0), [0, 0, 1])

    def test_errors(self):
        with pytest.raises(BehindCamera):
            project_point(K, RigidTransform.identity(), (0.0, 0.0, -1.0))
        with pytest.raises(BehindCamera):
            project_point(K, RigidTransform.identity(), (0.0, 0.0, 0.1))  # depth must exceed depth_min
        with pytest.raises(OutOfBounds):
            project_point(K, RigidTransform.identity(), (100.0, 0.0, 1.0))
        with pytest.raises(NonPositiveDepth):
            back_project(K, RigidTransform.identity(), 1.0, 1.0, 0.0)

    def test_bounds_half_open(self):
        t = RigidTransform.identity()
        # u = 640 exactly is outside; u just below is inside.
        _, _, _, valid = project_points(K, t, [[3.2, 0.0, 1.0], [3.2 - 1e-9, 0.0, 1.0], [-3.2, -2.4, 1.0]])
        assert valid.tolist() == [False, True, True]

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(1)
        t = random_transform(rng)
        pts = rng.normal(size=(500, 3)) * 10
        u, v, d, valid = project_points(K, t, pts)
        for p, uu, vv, dd, ok in zip(pts, u, v, d, valid):
            if ok:
                assert project_point(K, t, p) == pytest.approx((uu, vv, dd), abs=1e-12)
            else:
                with pytest.raises((BehindCamera, OutOfBounds)):
                    project_point(K, t, p)

    @given(seeds)
    def test_representation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        t, a = random_transform(rng), random_transform(rng)
        pts = rng.normal(size=(50, 3)) * 10
        u0, v0, d0, ok0 = project_points(K, t, pts)
        u1, v1, d1, ok1 = project_points(K, compose(t, compose(a, invert(a))), pts)
        np.testing.assert_allclose(np.c_[u0, v0, d0][ok0 & ok1], np.c_[u1, v1, d1][ok0 & ok1], atol=1e-9, rtol=0)

    def test_round_trip_random(self):
        rng = np.random.default_rng(2)
        t = random_transform(rng)
        u = rng.uniform(0, 640, 1000)
        v = rng.uniform(0, 480, 1000)
        d = rng.uniform(0.2, 100.0, 1000)
        x = back_project(K, t, u, v, d)
        u2, v2, d2, valid = project_points(K, t, x)
        assert valid.all()
        assert np.abs(np.c_[u2 - u, v2 - v, d2 - d]).max() < 1e-9

    def test_pixel_index_rounds_half_up_and_clamps(self):
        r, c = pixel_index(np.array([0.49, 0.5, 639.7]), np.array([0.5, 1.49, 479.9]), K)
        assert c.tolist() == [0, 1, 639]
        assert r.tolist() == [1, 1, 479]


class TestRig:
    def test_unique_ids_and_subset(self):
        cam = Camera("a", K, RigidTransform.identity())
        with pytest.raises(ValueError):
            SensorRig((cam, cam), RigidTransform.identity())
        rig = SensorRig((cam, Camera("b", K, rz(90))), RigidTransform.identity())
        assert rig.camera_ids == ["a", "b"]
        assert rig.subset(["b"]).camera_ids == ["b"]
