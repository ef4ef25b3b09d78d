"""Deterministic K-Means on per-channel MSE features."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_CLUSTERS = 128
DEFAULT_MAX_ITER = 300


@dataclass
class ClusterModel:
    centroids: np.ndarray
    labels: np.ndarray
    seed: int
    inertia: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


def _sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dist(x, x[chosen]).min(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # Fewer distinct points than clusters; the duplicate center ends up empty.
            idx = next(i for i in range(n) if i not in chosen)
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dist(x, x[idx : idx + 1])[:, 0])
    return x[chosen].copy()


def kmeans_cluster(features, k: int = DEFAULT_CLUSTERS, max_iter: int = DEFAULT_MAX_ITER, seed: int = 0) -> ClusterModel:
    """Lloyd K-Means with seeded k-means++ initialization.

    Points are sorted lexicographically before seeding, so the clustering
    does not depend on input order. Empty clusters are dropped from the
    returned model; labels are contiguous from 0.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"features must be a nonempty 2-D array, got shape {x.shape}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    n = x.shape[0]
    k = min(k, n)
    order = np.lexsort(x.T[::-1])
    xs = x[order]
    rng = np.random.default_rng(seed)
    centers = _plusplus_init(xs, k, rng)

    labels = None
    inertia = []
    iterations = 0
    for _ in range(max_iter):
        d2 = _sq_dist(xs, centers)
        new_labels = d2.argmin(axis=1)
        inertia.append(float(d2[np.arange(n), new_labels].sum()))
        iterations += 1
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts):
            centers[c] = xs[labels == c].mean(axis=0)

    used = np.flatnonzero(np.bincount(labels, minlength=k))
    remap = np.full(k, -1)
    remap[used] = np.arange(used.size)
    sorted_labels = remap[labels]
    out = np.empty(n, dtype=np.int64)
    out[order] = sorted_labels
    return ClusterModel(centers[used], out, seed, inertia, iterations)
