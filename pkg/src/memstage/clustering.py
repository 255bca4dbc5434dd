"""Staging and evaluation: Lloyd's k-means with k-means++ restarts, the
external clustering metrics (purity, NMI, ARI), and 2-D PCA projection.

All metric functions are pure and invariant under relabeling of cluster
ids; NMI uses natural-log entropies with the degenerate single-cluster
cases pinned (both trivial partitions -> 1, exactly one -> 0).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    inertia_history: np.ndarray  # inertia after each assignment pass


@dataclass
class MetricsReport:
    purity: float
    nmi: float
    ari: float


def _assign(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    return labels, inertia, d2


def _kmeanspp_init(points, k, rng):
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(n))]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points, k, max_iters, rng):
    centroids = _kmeanspp_init(points, k, rng)
    labels, inertia, d2 = _assign(points, centroids)
    history = [inertia]
    for it in range(1, max_iters + 1):
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = points[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its centroid
                worst = int(np.argmax(d2[np.arange(len(points)), labels]))
                new_centroids[j] = points[worst]
        new_labels, new_inertia, d2 = _assign(points, new_centroids)
        centroids = new_centroids
        history.append(new_inertia)
        moved = not np.array_equal(new_labels, labels)
        labels, inertia = new_labels, new_inertia
        if not moved:
            return labels, centroids, inertia, it, history
    return labels, centroids, inertia, max_iters, history


def kmeans(points, k, max_iters=100, seed=0, restarts=10):
    """Best of ``restarts`` Lloyd runs (k-means++ seeding) by final inertia;
    ties go to the earliest restart."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ArgumentError(f"points must be 2-D, got shape {points.shape}")
    if k < 1:
        raise ArgumentError("k must be at least 1")
    if len(points) < k:
        raise ArgumentError(f"{len(points)} points cannot form {k} clusters")
    if restarts < 1:
        raise ArgumentError("restarts must be at least 1")
    best = None
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    for r in range(restarts):
        rng = np.random.default_rng(seeds[r])
        labels, centroids, inertia, iters, history = _lloyd(points, k, max_iters, rng)
        if best is None or inertia < best.inertia:
            best = ClusterResult(
                assignments=labels, centroids=centroids, inertia=inertia,
                iterations=iters, inertia_history=np.asarray(history),
            )
    return best


def _check_pair(assignments, labels):
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    if len(assignments) != len(labels):
        raise ArgumentError(f"{len(assignments)} assignments vs {len(labels)} labels")
    if len(assignments) == 0:
        raise ArgumentError("empty partitions")
    return assignments, labels


def contingency(assignments, labels):
    a_ids, a_inv = np.unique(assignments, return_inverse=True)
    l_ids, l_inv = np.unique(labels, return_inverse=True)
    table = np.zeros((len(a_ids), len(l_ids)), dtype=np.int64)
    np.add.at(table, (a_inv, l_inv), 1)
    return table


def purity(assignments, labels):
    """Fraction of items whose cluster's majority label is their own."""
    assignments, labels = _check_pair(assignments, labels)
    table = contingency(assignments, labels)
    return float(table.max(axis=1).sum()) / len(labels)


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(assignments, labels):
    """2 I(C; L) / (H(C) + H(L)) with natural logs."""
    assignments, labels = _check_pair(assignments, labels)
    table = contingency(assignments, labels).astype(np.float64)
    n = table.sum()
    h_c = _entropy(table.sum(axis=1))
    h_l = _entropy(table.sum(axis=0))
    if h_c == 0.0 and h_l == 0.0:
        return 1.0
    if h_c == 0.0 or h_l == 0.0:
        return 0.0
    pa = table.sum(axis=1) / n
    pl = table.sum(axis=0) / n
    mutual = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            if table[i, j] > 0:
                pij = table[i, j] / n
                mutual += pij * np.log(pij / (pa[i] * pl[j]))
    return float(2.0 * mutual / (h_c + h_l))


def ari(assignments, labels):
    """Adjusted Rand index via pair-counting sums over the contingency table."""
    assignments, labels = _check_pair(assignments, labels)
    n = len(labels)
    if n < 2:
        raise ArgumentError("ARI needs at least 2 items")
    table = contingency(assignments, labels).astype(np.float64)

    def comb2(x):
        return x * (x - 1.0) / 2.0

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(float(n))
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def pca_project(points, dims=2):
    """Project onto the top eigenvectors of the covariance.

    Returns (projected, explained_variance_ratios).  Components are
    orthonormal with a deterministic sign (largest-magnitude entry
    positive); ratios are non-increasing and lie in [0, 1]."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) < 2:
        raise ArgumentError("pca_project needs at least 2 points in a 2-D array")
    if dims > points.shape[1] or dims < 1:
        raise ArgumentError(f"cannot take {dims} components from width {points.shape[1]}")
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / (len(points) - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    components = eigvecs[:, order]
    for j in range(components.shape[1]):
        pivot = int(np.argmax(np.abs(components[:, j])))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    total = eigvals.sum()
    ratios = eigvals[:dims] / total if total > 0 else np.zeros(dims)
    return centered @ components[:, :dims], ratios
