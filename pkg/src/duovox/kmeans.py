"""Lloyd's algorithm with seeded k-means++ initialization.

One engine serves both codebook training (k=320 over 256-d descriptor
halves) and phone-level label clustering (k=128 over 3-d pooled features).
The inertia trace records the objective after every assignment step and is
non-increasing by construction; empty clusters are re-seeded from the point
currently farthest from its assigned centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_trace: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_trace[-1]


def _squared_distances(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # |x - c|^2 expanded; clip tiny negative roundoff
    d2 = (
        (data * data).sum(axis=1)[:, None]
        - 2.0 * data @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _plus_plus_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = data[first]
    closest = _squared_distances(data, centroids[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all points coincide with chosen centroids; fall back to uniform
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest / total))
        centroids[j] = data[pick]
        d_new = _squared_distances(data, centroids[j:j + 1]).ravel()
        closest = np.minimum(closest, d_new)
    return centroids


def kmeans(data: np.ndarray, k: int, seed: int, max_iter: int = 100,
           tol: float = 1e-6) -> KMeansResult:
    """Cluster rows of data into k groups under squared Euclidean distance.

    Stops when the relative inertia change drops below tol or after
    max_iter assignment steps.  Deterministic for fixed (data, seed).
    """
    data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if data.ndim != 2:
        raise ValueError(f"expected 2-D data, got shape {data.shape}")
    n = data.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")

    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(data, k, rng)
    trace: list[float] = []
    labels = np.zeros(n, dtype=np.int64)

    for it in range(max_iter):
        d2 = _squared_distances(data, centroids)
        labels = d2.argmin(axis=1)  # ties resolve to the lowest index
        inertia = float(d2[np.arange(n), labels].sum())
        trace.append(inertia)

        if len(trace) >= 2:
            prev = trace[-2]
            rel = (prev - inertia) / prev if prev > 0.0 else 0.0
            if rel < tol:
                break

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, data)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]

        empties = np.flatnonzero(~nonempty)
        if empties.size:
            # hand each empty cluster its own farthest point, one at a time
            point_d2 = d2[np.arange(n), labels].copy()
            for cluster in empties:
                far = int(point_d2.argmax())
                centroids[cluster] = data[far]
                point_d2[far] = -1.0

    return KMeansResult(centroids=centroids, labels=labels,
                        inertia_trace=trace, n_iter=len(trace))
