import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semgrid.errors import DegenerateLength
from semgrid.vector import MapClass, MapInstance, Polyline, VectorMap, equivalent_orderings, polyline_length, resample

SQUARE = Polyline([[0, 0], [1, 0], [1, 1], [0, 1]], closed=True)


def random_polyline(rng, n, closed):
    return Polyline(rng.normal(size=(n, 2)) * 5, closed)


def arc_positions(points, poly):
    """Arc-length coordinate of each point, walking the polyline monotonically."""
    pts = np.vstack([poly.points, poly.points[:1]]) if poly.closed else poly.points
    seg = np.diff(pts, axis=0)
    lens = np.hypot(*seg.T)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    out, start, prev = [], 0, -1.0
    for q in points:
        for k in range(start, len(seg)):
            if lens[k] == 0:
                continue
            t = np.dot(q - pts[k], seg[k]) / lens[k] ** 2
            s = cum[k] + t * lens[k]
            if -1e-9 <= t <= 1 + 1e-9 and s > prev + 1e-12 and np.linalg.norm(pts[k] + t * seg[k] - q) < 1e-8:
                out.append(s)
                start, prev = k, s
                break
        else:
            raise AssertionError(f"point {q} is not on the polyline")
    return np.array(out), cum[-1]


class TestTypes:
    def test_class_codes_and_labels(self):
        assert [int(c) for c in MapClass] == [0, 1, 2, 3]
        assert [c.label for c in MapClass] == ["ped_crossing", "divider", "boundary", "centerline"]
        assert MapClass.from_label("boundary") is MapClass.BOUNDARY
        assert [c.closed for c in MapClass] == [True, False, False, False]
        with pytest.raises(ValueError):
            MapClass.from_label("sidewalk")

    def test_polyline_validation(self):
        with pytest.raises(ValueError):
            Polyline([[0, 0]])
        with pytest.raises(ValueError):
            Polyline([[0, 0], [np.nan, 1]])
        closed = Polyline([[0, 0], [1, 0], [1, 1], [0, 0]], closed=True)
        assert len(closed) == 3

    def test_instance_and_map(self):
        with pytest.raises(ValueError):
            MapInstance(MapClass.DIVIDER, SQUARE, 1.5)
        vm = VectorMap([MapInstance(0, SQUARE), MapInstance(MapClass.DIVIDER, Polyline([[0, 0], [1, 0]]))])
        assert len(vm.of_class(MapClass.PED_CROSSING)) == 1 and len(vm) == 2


class TestOrderings:
    def test_open(self):
        assert equivalent_orderings(Polyline(np.zeros((4, 2)) + np.arange(4)[:, None])) == [[0, 1, 2, 3], [3, 2, 1, 0]]

    def test_closed_count(self):
        assert len(equivalent_orderings(Polyline(np.eye(3)[:, :2] + [[0, 0], [0, 0], [1, 1]], True))) == 6

    def test_closed_five_preserves_adjacency(self):
        # Brute force: keep exactly the permutations of 0..4 that map the cycle graph onto itself.
        n = 5
        edges = {frozenset((j, (j + 1) % n)) for j in range(n)}
        automorphisms = [
            list(p) for p in itertools.permutations(range(n))
            if {frozenset((p[j], p[(j + 1) % n])) for j in range(n)} == edges
        ]
        got = equivalent_orderings(random_polyline(np.random.default_rng(0), n, True))
        assert len(got) == 10
        assert sorted(got) == sorted(automorphisms)

    @given(st.integers(2, 12), st.booleans(), st.integers(0, 2**31 - 1))
    def test_orderings_permute_points(self, n, closed, seed):
        p = random_polyline(np.random.default_rng(seed), n, closed)
        base = sorted(map(tuple, resample(p, 10).points.tolist()))
        for order in equivalent_orderings(p):
            assert sorted(order) == list(range(n))
            assert sorted(map(tuple, p.points[order].tolist())) == sorted(map(tuple, p.points.tolist()))
        assert base  # resampling is well defined for every ordering's source


class TestResample:
    def test_midpoint(self):
        np.testing.assert_array_equal(resample(Polyline([[0, 0], [1, 0]]), 3).points, [[0, 0], [0.5, 0], [1, 0]])

    def test_square_corners(self):
        np.testing.assert_allclose(resample(SQUARE, 4).points, SQUARE.points, atol=1e-15)

    def test_idempotent_on_uniform(self):
        p = resample(Polyline([[0, 0], [3, 4], [6, 0]]), 11)
        np.testing.assert_allclose(resample(p, 11).points, p.points, atol=1e-12, rtol=0)

    def test_degenerate(self):
        with pytest.raises(DegenerateLength):
            resample(Polyline([[1, 1], [1, 1]]), 5)
        with pytest.raises(ValueError):
            resample(SQUARE, 1)

    def test_repeated_points_are_skipped(self):
        p = Polyline([[0, 0], [0, 0], [2, 0], [2, 0]])
        np.testing.assert_allclose(resample(p, 3).points, [[0, 0], [1, 0], [2, 0]])

    @given(st.integers(2, 10), st.booleans(), st.integers(3, 40), st.integers(0, 2**31 - 1))
    @settings(max_examples=80)
    def test_equal_arc_spacing(self, n, closed, n_out, seed):
        p = random_polyline(np.random.default_rng(seed), n, closed)
        r = resample(p, n_out)
        assert len(r) == n_out
        s, total = arc_positions(r.points, p)
        step = total / n_out if closed else total / (n_out - 1)
        np.testing.assert_allclose(np.diff(s), step, atol=1e-9 * total, rtol=0)
        if not closed:
            np.testing.assert_array_equal(r.points[[0, -1]], p.points[[0, -1]])


class TestLength:
    def test_hand_values(self):
        assert polyline_length(Polyline([[0, 0], [3, 4]])) == 5.0
        assert polyline_length(SQUARE) == 4.0

    @given(st.integers(2, 10), st.integers(0, 2**31 - 1))
    def test_reversal_invariant(self, n, seed):
        p = random_polyline(np.random.default_rng(seed), n, False)
        assert polyline_length(p) == pytest.approx(polyline_length(p.reordered(range(n - 1, -1, -1))), abs=1e-12)
