"""cluster: k-means against the exhaustive-partition optimum, silhouette vs sklearn-free brute force."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcc.cluster import kmeans, silhouette_score
from vcc.errors import InvalidInputError


def exhaustive_best_inertia(points, k):
    """Minimum within-cluster sum of squares over every k-partition."""
    n = len(points)
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) != k:
            continue
        labels = np.array(labels)
        inertia = 0.0
        for j in range(k):
            members = points[labels == j]
            inertia += float(((members - members.mean(axis=0)) ** 2).sum())
        best = min(best, inertia)
    return best


def inertia_of(points, centroids, assign):
    return float(((points - centroids[assign]) ** 2).sum())


def brute_silhouette(points, assign):
    """Textbook per-point silhouette, computed independently with loops."""
    n = len(points)
    vals = []
    for i in range(n):
        same = [j for j in range(n) if assign[j] == assign[i] and j != i]
        if not same:
            vals.append(0.0)
            continue
        a = np.mean([np.linalg.norm(points[i] - points[j]) for j in same])
        b = min(np.mean([np.linalg.norm(points[i] - points[j])
                         for j in range(n) if assign[j] == lab])
                for lab in set(assign) if lab != assign[i])
        denom = max(a, b)
        vals.append(0.0 if denom == 0 else (b - a) / denom)
    return float(np.mean(vals))


class TestKMeans:
    def test_reaches_global_optimum_on_small_instances(self):
        rng = np.random.default_rng(0)
        for trial in range(50):
            n = int(rng.integers(4, 9))
            k = int(rng.integers(2, min(3, n - 1) + 1))
            points = rng.normal(size=(n, 2))
            centroids, assign = kmeans(points, k, seed=trial)
            got = inertia_of(points, centroids, assign)
            want = exhaustive_best_inertia(points, k)
            assert got <= want + 1e-9, f"trial {trial}: {got} > optimum {want}"

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(1)
        points = rng.normal(size=(30, 3))
        c1, a1 = kmeans(points, 4, seed=11)
        c2, a2 = kmeans(points, 4, seed=11)
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(c1, c2)

    def test_k_equals_n_gives_singletons(self):
        points = np.array([[0.0], [1.0], [5.0]])
        centroids, assign = kmeans(points, 3, seed=0)
        assert len(set(assign.tolist())) == 3
        assert inertia_of(points, centroids, assign) < 1e-12

    def test_duplicate_points_handled(self):
        points = np.zeros((6, 2))
        centroids, assign = kmeans(points, 2, seed=0)
        assert inertia_of(points, centroids, assign) == 0.0

    def test_invalid_k_raises(self):
        points = np.zeros((3, 2))
        with pytest.raises(InvalidInputError):
            kmeans(points, 0, seed=0)
        with pytest.raises(InvalidInputError):
            kmeans(points, 4, seed=0)

    def test_empty_points_raise(self):
        with pytest.raises(InvalidInputError):
            kmeans(np.zeros((0, 2)), 1, seed=0)


class TestSilhouette:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            n = int(rng.integers(4, 12))
            points = rng.normal(size=(n, 2))
            assign = rng.integers(0, 3, size=n)
            got = silhouette_score(points, assign)
            want = brute_silhouette(points, assign)
            assert abs(got - want) < 1e-12

    def test_well_separated_blobs_near_one(self):
        points = np.vstack([np.zeros((5, 2)), np.full((5, 2), 100.0)])
        assign = np.array([0] * 5 + [1] * 5)
        assert silhouette_score(points, assign) > 0.99

    def test_single_cluster_scores_zero(self):
        points = np.random.default_rng(3).normal(size=(6, 2))
        assert silhouette_score(points, np.zeros(6, dtype=int)) == 0.0

    def test_singletons_score_zero(self):
        points = np.array([[0.0, 0.0], [10.0, 0.0], [0.1, 0.0]])
        assign = np.array([0, 1, 0])
        # the singleton contributes 0; the others computed normally
        want = brute_silhouette(points, assign)
        assert silhouette_score(points, assign) == pytest.approx(want)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_kmeans_assignment_is_nearest_centroid(seed):
    rng = np.random.default_rng(seed)
    points = rng.normal(size=(12, 2))
    centroids, assign = kmeans(points, 3, seed=seed)
    d2 = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    np.testing.assert_array_equal(assign, d2.argmin(axis=1))
