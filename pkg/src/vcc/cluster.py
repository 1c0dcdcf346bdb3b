"""Seeded k-means (k-means++ init, Lloyd iterations) and silhouette scoring.

Shared by the feature-space segmentation and the concept discovery stages;
both cluster with plain l2 distance.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import InvalidInputError

MAX_ITERS = 100
SHIFT_TOL = 1e-6


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    idx = int(rng.integers(0, n))
    centroids[0] = points[idx]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    k = centroids.shape[0]
    assign = _assign(points, centroids)
    for _ in range(MAX_ITERS):
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[assign == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                # repair: seize the point farthest from its current centroid
                far = np.argmax(((points - new_centroids[_assign(points, new_centroids)]) ** 2).sum(axis=1))
                new_centroids[j] = points[far]
        new_assign = _assign(points, new_centroids)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids, assign = new_centroids, new_assign
        if shift < SHIFT_TOL:
            break
    inertia = float(((points - centroids[assign]) ** 2).sum())
    return centroids, assign, inertia


def kmeans(points: np.ndarray, k: int, seed: int, n_init: int = 10):
    """Best of n_init seeded k-means++ runs; deterministic for a fixed seed.

    Returns (centroids, assignments). Empty clusters are repaired by
    reassigning the point farthest from its centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise InvalidInputError("points must be a nonempty 2-D array")
    if not 1 <= k <= len(points):
        raise InvalidInputError(f"k={k} invalid for {len(points)} points")
    rng = np.random.default_rng([seed, 0x6B6D])
    best = None
    inits = [_kmeanspp_init(points, k, rng) for _ in range(n_init)]
    if len(points) <= 8:
        # tiny instances: additionally seed from every k-subset of points,
        # which reliably reaches the global optimum
        inits.extend(points[list(combo)]
                     for combo in itertools.combinations(range(len(points)), k))
    for centroids in inits:
        centroids, assign, inertia = _lloyd(points, centroids)
        if best is None or inertia < best[2] - 1e-12:
            best = (centroids, assign, inertia)
    return best[0], best[1]


def silhouette_score(points: np.ndarray, assign: np.ndarray) -> float:
    """Mean silhouette coefficient; singleton clusters score 0."""
    n = len(points)
    dists = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    labels = np.unique(assign)
    if len(labels) < 2:
        return 0.0
    scores = np.zeros(n)
    for i in range(n):
        own = assign == assign[i]
        n_own = own.sum()
        if n_own <= 1:
            scores[i] = 0.0
            continue
        a = dists[i, own].sum() / (n_own - 1)
        b = np.inf
        for lab in labels:
            if lab == assign[i]:
                continue
            b = min(b, dists[i, assign == lab].mean())
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())
