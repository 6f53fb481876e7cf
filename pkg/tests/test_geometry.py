import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptcomplete import geometry
from ptcomplete.geometry import GeometryError, PointCloud


def fps_oracle(pts, m, start):
    """Exhaustive scan: at each step pick the point maximizing min distance to the chosen set."""
    chosen = [start]
    while len(chosen) < m:
        best, best_d = -1, -1.0
        for i in range(len(pts)):
            if i in chosen:
                continue
            d = min(float(np.sum((pts[i] - pts[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return np.array(chosen)


def knn_oracle(q, r, k):
    d = np.array([[float(np.sum((a - b) ** 2)) for b in r] for a in q])
    return np.argsort(d, axis=1, kind="stable")[:, :k]


class TestPointCloud:
    def test_rejects_bad_shape(self):
        with pytest.raises(GeometryError):
            PointCloud(np.zeros((4, 2)))

    def test_rejects_nan(self):
        with pytest.raises(GeometryError):
            PointCloud(np.array([[0.0, np.nan, 1.0]]))

    def test_count(self):
        assert PointCloud(np.zeros((5, 3))).count == 5


class TestSphere:
    def test_unit_norms(self):
        pts = geometry.sample_gaussian_sphere(1000, 3).points
        assert np.abs(np.linalg.norm(pts, axis=1) - 1).max() <= 1e-6

    def test_seed_determinism(self):
        a = geometry.sample_gaussian_sphere(50, 9).points
        b = geometry.sample_gaussian_sphere(50, 9).points
        assert a.tobytes() == b.tobytes()

    def test_uniform_mean(self):
        assert np.linalg.norm(geometry.sample_gaussian_sphere(100_000, 1).points.mean(axis=0)) < 0.02

    def test_empty_is_error(self):
        with pytest.raises(GeometryError):
            geometry.sample_gaussian_sphere(0, 0)


class TestFPS:
    def test_square_corners(self):
        sq = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        np.testing.assert_array_equal(geometry.farthest_point_sample(sq, 2, 0), [0, 3])

    def test_full_permutation(self, rng):
        pts = rng.standard_normal((20, 3))
        assert sorted(geometry.farthest_point_sample(pts, 20, 4).tolist()) == list(range(20))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 40))
        pts = r.standard_normal((n, 3))
        m, start = int(r.integers(1, n + 1)), int(r.integers(0, n))
        np.testing.assert_array_equal(geometry.farthest_point_sample(pts, m, start), fps_oracle(pts, m, start))

    def test_duplicates_of_selected_points_do_not_change_selection(self, rng):
        pts = rng.standard_normal((30, 3))
        first = geometry.farthest_point_sample(pts, 8, 0)
        padded = np.concatenate([pts, pts[first]])
        np.testing.assert_array_equal(geometry.farthest_point_sample(padded, 8, 0), first)

    @pytest.mark.parametrize("m,start", [(0, 0), (11, 0), (3, 10)])
    def test_bad_arguments(self, m, start):
        with pytest.raises(GeometryError):
            geometry.farthest_point_sample(np.zeros((10, 3)), m, start)


class TestKNN:
    def test_self_match_first(self, rng):
        r = rng.standard_normal((15, 3))
        assert geometry.knn(r[4:5], r, 3)[0, 0] == 4

    def test_k_equals_count_sorts_everything(self, rng):
        q, r = rng.standard_normal((3, 3)), rng.standard_normal((9, 3))
        np.testing.assert_array_equal(geometry.knn(q, r, 9), knn_oracle(q, r, 9))

    @pytest.mark.parametrize("space", ["coordinate", "feature"])
    def test_matches_oracle(self, rng, space):
        dim = 3 if space == "coordinate" else 7
        q, r = rng.standard_normal((12, dim)), rng.standard_normal((30, dim))
        np.testing.assert_array_equal(geometry.knn(q, r, 5, space), knn_oracle(q, r, 5))

    def test_ties_to_lowest_index(self):
        r = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
        np.testing.assert_array_equal(geometry.knn(np.zeros((1, 3)), r, 3), [[0, 1, 2]])

    def test_translation_invariance(self, rng):
        q, r = rng.standard_normal((10, 3)), rng.standard_normal((25, 3))
        t = np.array([0.25, -0.5, 0.125])  # exactly representable shift
        np.testing.assert_array_equal(geometry.knn(q, r, 4), geometry.knn(q + t, r + t, 4))

    def test_errors(self, rng):
        with pytest.raises(GeometryError):
            geometry.knn(rng.standard_normal((2, 3)), rng.standard_normal((3, 3)), 4)
        with pytest.raises(GeometryError):
            geometry.knn(rng.standard_normal((2, 3)), rng.standard_normal((3, 4)), 1)
        with pytest.raises(GeometryError):
            geometry.knn(rng.standard_normal((2, 3)), rng.standard_normal((3, 3)), 1, "manhattan")


class TestCrop:
    def test_keep_all(self, rng):
        pts = rng.standard_normal((40, 3))
        np.testing.assert_array_equal(geometry.halfspace_crop(pts, [0, 0, 1], 1.0).points, pts)

    def test_survivors_below_median(self):
        pts = geometry.sample_gaussian_sphere(401, 2).points
        kept = geometry.halfspace_crop(pts, [0, 0, 1], 0.5).points
        assert kept[:, 2].max() <= np.median(pts[:, 2]) + 1e-12

    def test_sort_then_slice_oracle(self, rng):
        pts = rng.standard_normal((128, 3))
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        order = np.argsort(pts @ d, kind="stable")[:64]
        expected = pts[np.sort(order)]
        np.testing.assert_array_equal(geometry.halfspace_crop(pts, d, 0.5).points, expected)

    @pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(GeometryError):
            geometry.halfspace_crop(np.zeros((4, 3)), [1, 0, 0], frac)


class TestNormalize:
    def test_unit_radius(self, rng):
        pc, _, _ = geometry.normalize_cloud(rng.standard_normal((50, 3)) * 4 + 2)
        assert abs(np.linalg.norm(pc.points, axis=1).max() - 1) <= 1e-6

    def test_idempotent(self, rng):
        once, _, _ = geometry.normalize_cloud(rng.standard_normal((50, 3)))
        twice, center, scale = geometry.normalize_cloud(once)
        np.testing.assert_allclose(twice.points, once.points, atol=1e-6)
        assert abs(scale - 1) < 1e-6 and np.abs(center).max() < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 60), st.floats(0.01, 100), st.integers(0, 2**31))
    def test_round_trip(self, n, spread, seed):
        pts = np.random.default_rng(seed).standard_normal((n, 3)) * spread
        pc, center, scale = geometry.normalize_cloud(pts)
        np.testing.assert_allclose(geometry.denormalize_cloud(pc, center, scale).points, pts, atol=1e-5 * max(1, spread))


class TestResample:
    def test_subsample_and_pad(self, rng):
        pts = rng.standard_normal((10, 3))
        assert geometry.resample(pts, 4, rng).count == 4
        padded = geometry.resample(pts, 25, rng).points
        assert padded.shape == (25, 3)
        np.testing.assert_array_equal(padded[:10], pts)
