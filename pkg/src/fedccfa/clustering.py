"""Class-level clustering of client classifiers.

Each client's classifier is cut into per-class rows ``[w_c, b_c]``. For every class the
clients are compared with the MADD distance (mean absolute difference of their cosine
distances to all other clients) and grouped by DBSCAN over the precomputed matrix.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .model import COSINE_EPS


@dataclass
class DistanceMatrix:
    values: np.ndarray
    client_ids: tuple
    fallback: bool = False  # True when fewer than 3 clients forced plain cosine distances


@dataclass
class ClusterAssignment:
    """``clusters[c]`` is a list of client-id tuples partitioning the selected clients."""

    clusters: list
    matrices: list = field(default_factory=list)

    def cluster_of(self, c: int, client_id: int) -> tuple:
        for block in self.clusters[c]:
            if client_id in block:
                return block
        raise KeyError(client_id)

    def counts(self) -> list:
        return [len(blocks) for blocks in self.clusters]


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("cosine_distance needs vectors of equal dimension")
    return float(1.0 - u @ v / max(np.linalg.norm(u) * np.linalg.norm(v), COSINE_EPS))


def cosine_distance_matrix(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    dist = 1.0 - (vectors @ vectors.T) / np.maximum(np.outer(norms, norms), COSINE_EPS)
    dist = (dist + dist.T) / 2.0
    np.fill_diagonal(dist, 0.0)
    return dist


def madd(vectors: np.ndarray):
    """MADD matrix over the rows of ``vectors``; returns ``(matrix, fallback_flag)``.

    With fewer than three rows the 1/(n-2) average is undefined and the plain cosine
    distance matrix is returned instead, flagged.
    """
    cos = cosine_distance_matrix(vectors)
    n = cos.shape[0]
    if n < 3:
        return cos, True
    # |cos[i, q] - cos[j, q]| summed over q, then drop the q = i and q = j terms
    diff = np.abs(cos[:, None, :] - cos[None, :, :])
    total = diff.sum(axis=2)
    own = np.abs(np.diag(cos)[:, None] - cos)  # q = i: |cos[i,i] - cos[j,i]|
    total = total - own - own.T
    dist = total / (n - 2)
    dist = np.maximum((dist + dist.T) / 2.0, 0.0)
    np.fill_diagonal(dist, 0.0)
    return dist, False


def madd_matrix(class_classifiers: dict, c: int) -> DistanceMatrix:
    """Distance between clients' class-``c`` classifiers; ``class_classifiers[k]`` is (C, d)."""
    ids = tuple(sorted(class_classifiers))
    vectors = np.stack([np.asarray(class_classifiers[k])[c] for k in ids])
    values, fallback = madd(vectors)
    return DistanceMatrix(values, ids, fallback)


def dbscan(distances, eps: float, min_samples: int = 1) -> list:
    """DBSCAN over a precomputed distance matrix.

    Returns clusters as sorted index tuples ordered by their smallest member. Points that
    end up as noise are reported as singleton clusters so the result is a partition.
    """
    dist = np.asarray(distances, dtype=np.float64)
    if eps <= 0 or min_samples < 1:
        raise ValueError("eps must be > 0 and min_samples >= 1")
    n = dist.shape[0]
    neighbours = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([nb.size >= min_samples for nb in neighbours])
    labels = np.full(n, -1)
    next_label = 0
    for start in range(n):
        if labels[start] != -1 or not core[start]:
            continue
        labels[start] = next_label
        queue = deque([start])
        while queue:
            point = queue.popleft()
            if not core[point]:
                continue
            for other in neighbours[point]:
                if labels[other] == -1:
                    labels[other] = next_label
                    queue.append(other)
        next_label += 1

    clusters = [tuple(np.flatnonzero(labels == lab).tolist()) for lab in range(next_label)]
    clusters += [(int(i),) for i in np.flatnonzero(labels == -1)]
    return sorted(clusters, key=lambda block: block[0])


def cluster_all_classes(class_classifiers: dict, eps: float = 0.1,
                        min_samples: int = 1) -> ClusterAssignment:
    ids = tuple(sorted(class_classifiers))
    n_classes = np.asarray(class_classifiers[ids[0]]).shape[0]
    clusters, matrices = [], []
    for c in range(n_classes):
        matrix = madd_matrix(class_classifiers, c)
        blocks = dbscan(matrix.values, eps, min_samples)
        clusters.append([tuple(ids[i] for i in block) for block in blocks])
        matrices.append(matrix)
    return ClusterAssignment(clusters, matrices)


def partition_labels(blocks, ids) -> np.ndarray:
    lookup = {k: m for m, block in enumerate(blocks) for k in block}
    return np.array([lookup[k] for k in ids])


def rand_index(labels_a, labels_b) -> float:
    """Fraction of point pairs on which two partitions agree (1.0 for fewer than two points)."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    n = a.size
    if n < 2:
        return 1.0
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    agree = (same_a == same_b)[np.triu_indices(n, k=1)]
    return float(agree.mean())


def write_distance_csv(matrix: DistanceMatrix, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(matrix.client_ids)
        for row in matrix.values:
            writer.writerow([f"{v:.6f}" for v in row])


class MADDClustering(BaseEstimator, ClusterMixin):
    """Cluster vectors with DBSCAN over their MADD (cosine-profile) distances.

    Parameters
    ----------
    eps : float
        Maximum MADD distance for two points to be neighbours.
    min_samples : int
        DBSCAN core-point threshold; at 1 every point is core and clusters are the
        connected components of the ``distance <= eps`` graph.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Cluster index of each row; clusters are numbered by their first member.
    distance_matrix_ : ndarray of shape (n_samples, n_samples)
    fallback_ : bool
        Whether fewer than three rows forced plain cosine distances.
    """

    def __init__(self, eps=0.1, min_samples=1):
        self.eps = eps
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.distance_matrix_, self.fallback_ = madd(X)
        blocks = dbscan(self.distance_matrix_, self.eps, self.min_samples)
        self.labels_ = partition_labels(blocks, range(X.shape[0]))
        self.n_clusters_ = len(blocks)
        return self
