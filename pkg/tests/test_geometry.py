import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from kgedet import geometry
from oracles import loop_distance_matrix

finite_vec = hnp.arrays(
    np.float64,
    st.integers(1, 8),
    elements=st.floats(-10, 10, allow_nan=False, allow_infinity=False),
)


class TestProjectUnitSphere:
    def test_inside_ball_unchanged(self):
        x = np.array([0.3, 0.4])  # norm 0.5
        np.testing.assert_array_equal(geometry.project_unit_sphere(x), x)

    def test_outside_ball_normalized(self):
        x = np.array([0.0, 2.0])
        out = geometry.project_unit_sphere(x)
        assert np.linalg.norm(out) == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(finite_vec)
    def test_idempotent_and_nonexpansive(self, x):
        once = geometry.project_unit_sphere(x)
        np.testing.assert_allclose(geometry.project_unit_sphere(once), once, atol=1e-15)
        assert np.linalg.norm(once) <= np.linalg.norm(x) + 1e-12
        assert np.linalg.norm(once) <= 1.0 + 1e-12

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            geometry.project_unit_sphere([np.nan, 0.0])


class TestLkDistance:
    def test_zero_for_equal(self):
        assert geometry.lk_distance([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_manhattan_hand_value(self):
        assert geometry.lk_distance([1.0, 0.0], [0.0, 1.0], k=1) == pytest.approx(2.0)

    def test_euclidean_hand_value(self):
        assert geometry.lk_distance([1.0, 0.0], [0.0, 1.0], k=2) == pytest.approx(
            math.sqrt(2)
        )

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            geometry.lk_distance([1.0], [1.0, 2.0])

    def test_nonpositive_k(self):
        with pytest.raises(ValueError, match="positive"):
            geometry.lk_distance([1.0], [2.0], k=0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
    def test_triangle_inequality(self, seed, k):
        rng = np.random.default_rng(seed)
        a, b, c = rng.standard_normal((3, 5))
        ab = geometry.lk_distance(a, b, k)
        assert ab <= geometry.lk_distance(a, c, k) + geometry.lk_distance(c, b, k) + 1e-12


class TestCosineDistance:
    def test_trivial_angles(self):
        assert geometry.cosine_distance([1, 0], [2, 0]) == pytest.approx(0.0, abs=1e-12)
        assert geometry.cosine_distance([1, 0], [0, 3]) == pytest.approx(1.0)
        assert geometry.cosine_distance([1, 0], [-5, 0]) == pytest.approx(2.0)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            geometry.cosine_distance([0.0, 0.0], [1.0, 0.0])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000))
    def test_scale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 6))
        lam, mu = rng.uniform(0.01, 100, size=2)
        assert geometry.cosine_distance(lam * a, mu * b) == pytest.approx(
            geometry.cosine_distance(a, b), abs=1e-9
        )


class TestSimilarity:
    def test_identical_vectors(self):
        assert geometry.similarity([1.0, 1.0], [1.0, 1.0], "cosine") == pytest.approx(1.0)

    def test_orthogonal_cosine(self):
        assert geometry.similarity([1, 0], [0, 1], "cosine") == pytest.approx(0.5)

    def test_antiparallel_cosine(self):
        assert geometry.similarity([1, 0], [-1, 0], "cosine") == pytest.approx(0.0)

    def test_composition_with_cosine_angle(self, rng):
        for _ in range(50):
            a, b = rng.standard_normal((2, 4))
            cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
            assert geometry.similarity(a, b, "cosine") == pytest.approx(
                (1 + cos) / 2, abs=1e-12
            )

    def test_manhattan_requires_unit_ball(self):
        with pytest.raises(ValueError, match="unit L2 ball"):
            geometry.similarity([3.0, 0.0], [0.0, 0.5], "manhattan")

    def test_manhattan_inside_ball(self):
        assert geometry.similarity([0.5, 0.0], [0.0, 0.5], "manhattan") == pytest.approx(0.5)

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="unknown metric"):
            geometry.similarity([1.0], [1.0], "chebyshev")


class TestDistanceMatrix:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(["cosine", "manhattan"]))
    def test_matches_loop_oracle(self, seed, metric):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal((3, 4))
        p = rng.standard_normal((5, 4))
        ours = geometry.distance_matrix(q, p, metric)
        np.testing.assert_allclose(ours, loop_distance_matrix(q, p, metric), atol=1e-12)

    def test_cosine_bounds(self, rng):
        q = rng.standard_normal((40, 6))
        p = rng.standard_normal((7, 6))
        d = geometry.distance_matrix(q, p, "cosine")
        assert d.min() >= 0.0 and d.max() <= 2.0


class TestSimilarityBackprop:
    @pytest.mark.parametrize("metric", ["cosine", "manhattan"])
    def test_matches_per_pair_gradients(self, metric, rng):
        q = rng.standard_normal((4, 5)) * 0.3
        p = rng.standard_normal((3, 5)) * 0.3
        w = rng.standard_normal((4, 3))
        out = geometry.similarity_backprop(q, p, w, metric)
        expected = np.zeros_like(q)
        for n in range(4):
            for c in range(3):
                expected[n] += w[n, c] * (-0.5) * geometry.distance_gradient(q[n], p[c], metric)
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestZscore:
    def test_two_point_hand_case(self):
        out = geometry.zscore_standardize([[0.0], [2.0]])
        np.testing.assert_allclose(out, [[-1.0], [1.0]])

    def test_constant_dimension_maps_to_zero(self):
        out = geometry.zscore_standardize([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        np.testing.assert_array_equal(out[:, 1], 0.0)

    def test_batch_means_vanish(self, rng):
        x = rng.standard_normal((64, 7)) * 3 + 1
        out = geometry.zscore_standardize(x)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)

    def test_too_small_batch(self):
        with pytest.raises(ValueError, match="at least 2"):
            geometry.zscore_standardize([[1.0, 2.0]])


class TestHubness:
    def test_single_prototype(self, rng):
        queries = rng.standard_normal((10, 3))
        report = geometry.hubness(queries, rng.standard_normal((1, 3)), k=1)
        assert report.k_occurrence.tolist() == [10]
        assert report.skewness == 0.0

    def test_balanced_symmetric_setup(self):
        prototypes = np.array([[1.0, 0.0], [-1.0, 0.0]])
        queries = np.array([[0.9, 0.1], [-0.9, 0.1], [0.8, -0.2], [-0.8, -0.2]])
        report = geometry.hubness(queries, prototypes, k=1, metric="cosine")
        assert report.k_occurrence.tolist() == [2, 2]
        assert report.skewness == 0.0

    def test_planted_hub(self, rng):
        prototypes = np.vstack([[1.0, 0.0, 0.0], rng.standard_normal((4, 3)) + 5.0])
        queries = np.array([1.0, 0.0, 0.0]) + 0.01 * rng.standard_normal((25, 3))
        report = geometry.hubness(queries, prototypes, k=1, metric="cosine")
        assert report.k_occurrence[0] == 25

    def test_occurrences_sum_to_k_times_n(self, rng):
        queries = rng.standard_normal((30, 4))
        prototypes = rng.standard_normal((6, 4))
        report = geometry.hubness(queries, prototypes, k=3, metric="manhattan")
        assert report.k_occurrence.sum() == 3 * 30

    def test_k_too_large(self, rng):
        with pytest.raises(ValueError, match="exceeds"):
            geometry.hubness(rng.standard_normal((5, 3)), rng.standard_normal((2, 3)), k=3)

    def test_empty_queries(self, rng):
        with pytest.raises(ValueError, match="empty"):
            geometry.hubness(np.zeros((0, 3)), rng.standard_normal((2, 3)), k=1)

    def test_report_json(self, rng):
        report = geometry.hubness(rng.standard_normal((5, 3)), rng.standard_normal((2, 3)), k=1)
        obj = report.to_json()
        assert set(obj) == {"k", "k_occurrence", "skewness"}
