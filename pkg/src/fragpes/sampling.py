"""Descriptor-space tessellation: mini-batch k-means, slices, recursive refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

SAMPLE_FRACTION = 0.1
INERTIA_FACTOR = 2.0

_CHUNK = 4096


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    per_cluster_avg_inertia: np.ndarray
    avg_inertia: float
    max_sample_to_centroid_distance: float
    seed: int = 0
    n_iter: int = 0

    @property
    def total_inertia(self) -> float:
        return self.avg_inertia * len(self.assignments)


@dataclass
class SlicePartition:
    primitive_centroids: np.ndarray
    slice_width: float
    slice_of: np.ndarray
    distances: np.ndarray

    def members(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.slice_of == s)

    @property
    def n_slices(self) -> int:
        return int(self.slice_of.max()) if len(self.slice_of) else 0


@dataclass
class SliceClusterResult:
    slice_id: int
    centroids: list[np.ndarray] = field(default_factory=list)
    inertia: list[np.ndarray] = field(default_factory=list)
    final_centroids: np.ndarray = None
    final_inertia: np.ndarray = None
    final_sizes: np.ndarray = None
    training_indices: np.ndarray = None
    rounds: int = 0
    # (round, size, inertia, children) for every cluster sent back for splitting
    splits: list[tuple[int, int, float, int]] = field(default_factory=list)


def _as_2d(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def nearest(data: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest centroid (lowest index on ties)."""
    n = len(data)
    idx = np.empty(n, dtype=np.intp)
    d2 = np.empty(n)
    for start in range(0, n, _CHUNK):
        block = cdist(data[start:start + _CHUNK], centroids, "sqeuclidean")
        j = np.argmin(block, axis=1)
        idx[start:start + _CHUNK] = j
        d2[start:start + _CHUNK] = block[np.arange(len(j)), j]
    return idx, d2


def _stats(data, centroids, assign, d2):
    k = len(centroids)
    sizes = np.bincount(assign, minlength=k)
    sums = np.bincount(assign, weights=d2, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(sizes > 0, sums / np.maximum(sizes, 1), 0.0)
    return per, float(d2.sum() / len(data)), float(np.sqrt(d2.max()))


def _fill_empty(data, centroids, assign, d2):
    """Re-seed empty clusters at the farthest point of the largest cluster."""
    k = len(centroids)
    for _ in range(k + 1):
        sizes = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(sizes == 0)
        if not len(empty):
            break
        big = int(np.argmax(sizes))
        if sizes[big] < 2:
            break
        members = np.flatnonzero(assign == big)
        far = members[np.argmax(d2[members])]
        centroids[empty[0]] = data[far]
        assign, d2 = nearest(data, centroids)
    return centroids, assign, d2


def _finish(data, centroids, seed, n_iter) -> ClusterModel:
    assign, d2 = nearest(data, centroids)
    centroids, assign, d2 = _fill_empty(data, centroids, assign, d2)
    used = np.unique(assign)
    if len(used) < len(centroids):
        # unrecoverable empties (duplicate points): drop them
        centroids = centroids[used]
        assign, d2 = nearest(data, centroids)
    per, avg, dmax = _stats(data, centroids, assign, d2)
    return ClusterModel(len(centroids), centroids, assign, per, avg, dmax, seed, n_iter)


def lloyd_step(data, model: ClusterModel) -> ClusterModel:
    """One full-batch k-means update (mean of members, then reassignment)."""
    data = _as_2d(data)
    centroids = model.centroids.copy()
    for j in range(model.k):
        members = model.assignments == j
        if members.any():
            centroids[j] = data[members].mean(axis=0)
    return _finish(data, centroids, model.seed, model.n_iter + 1)


def minibatch_kmeans(data, k: int, batch_size: int = 1024, max_iter: int = 100,
                     seed: int = 0, tol: float = 1e-6, n_refine: int = 10) -> ClusterModel:
    """Mini-batch k-means with streaming per-centroid means.

    Each centroid keeps a count of the samples it has absorbed; a batch
    moves it to the running mean of everything assigned so far, which is
    the per-sample update with learning rate ``1/count``. Iteration stops
    once no centroid moves more than ``tol``. Up to ``n_refine`` full-batch
    Lloyd steps follow, and a final full-data assignment pass fixes
    ``assignments``.
    """
    data = _as_2d(data)
    n = len(data)
    if n == 0:
        raise ClusteringError("cannot cluster an empty data set")
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} must lie in [1, {n}]")
    if batch_size < 1:
        raise ClusteringError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)

    # seed with k distinct rows where possible
    uniq = np.unique(data, axis=0, return_index=True)[1]
    pool = np.sort(uniq) if len(uniq) >= k else np.arange(n)
    centroids = data[np.sort(rng.choice(pool, size=k, replace=False))].copy()
    counts = np.ones(k)

    b = min(batch_size, n)
    it = 0
    for it in range(1, max_iter + 1):
        batch = data[rng.choice(n, size=b, replace=False)]
        assign, _ = nearest(batch, centroids)
        hit = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, batch)
        moved = hit > 0
        new = centroids.copy()
        new[moved] = (counts[moved, None] * centroids[moved] + sums[moved]) / (counts[moved] + hit[moved])[:, None]
        counts += hit
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        centroids = new
        if shift < tol:
            break

    model = _finish(data, centroids, seed, it)
    for _ in range(n_refine):
        nxt = lloyd_step(data, model)
        if np.array_equal(nxt.assignments, model.assignments) and nxt.k == model.k:
            model = nxt
            break
        model = nxt
    return model


def kmeans_cost(data, centroids, assignments) -> float:
    data = _as_2d(data)
    diff = data - np.asarray(centroids)[assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def average_inertia(model: ClusterModel, data=None) -> float:
    """Mean squared sample-to-centroid distance over all clustered samples.

    With ``data`` the value is recomputed from the stored centroids and
    assignments; otherwise the stored value is returned.
    """
    if data is None:
        return model.avg_inertia
    return kmeans_cost(data, model.centroids, model.assignments) / len(model.assignments)


def select_training_points(data, centroids) -> np.ndarray:
    """Sorted indices of the data points closest to each centroid."""
    data = _as_2d(data)
    c = _as_2d(centroids)
    if not len(c):
        raise ClusteringError("no centroids")
    picks = []
    for start in range(0, len(c), _CHUNK):
        block = cdist(c[start:start + _CHUNK], data, "sqeuclidean")
        picks.append(np.argmin(block, axis=1))
    return np.unique(np.concatenate(picks))


def sample_count(n: int, fraction: float = SAMPLE_FRACTION) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    return max(1, min(n, int(round(fraction * n))))


def assign_slices(data, primitive: ClusterModel) -> SlicePartition:
    """Shell index ``floor(d / width) + 1`` by distance to the nearest primitive centroid."""
    width = primitive.max_sample_to_centroid_distance
    if not width > 0:
        raise ClusteringError("slice width is zero: primitive samples are identical")
    data = _as_2d(data)
    if not len(data):
        return SlicePartition(primitive.centroids, width, np.zeros(0, dtype=int), np.zeros(0))
    _, d2 = nearest(data, primitive.centroids)
    d = np.sqrt(d2)
    return SlicePartition(primitive.centroids, width, np.floor(d / width).astype(int) + 1, d)


def initial_slice_k(n: int) -> int:
    return max(1, int(round(math.sqrt(n))))


def child_cluster_count(eta: float, eta0: float) -> int:
    return max(2, math.ceil(eta / eta0))


def recursive_slice_clustering(slice_data, eta0: float, seed: int = 0, slice_id: int = 0,
                               factor: float = INERTIA_FACTOR, batch_size: int = 1024,
                               max_iter: int = 100) -> SliceClusterResult:
    """Split a slice until every cluster's average inertia is at most ``factor * eta0``.

    Round 1 uses ``round(sqrt(n))`` clusters. An oversized cluster is
    re-clustered on its own members into ``max(2, ceil(eta / eta0))``
    children (capped by its number of distinct points).
    """
    data = _as_2d(slice_data)
    if not len(data):
        raise ClusteringError("empty slice")
    if not eta0 > 0:
        raise ClusteringError("eta0 must be positive")
    result = SliceClusterResult(slice_id)
    final_c, final_eta, final_n = [], [], []

    pending = [(np.arange(len(data)), initial_slice_k(len(data)))]
    round_no = 0
    while pending:
        round_no += 1
        nxt = []
        round_c, round_eta = [], []
        for members, k in pending:
            sub = data[members]
            k = min(k, len(np.unique(sub, axis=0)))
            model = minibatch_kmeans(sub, k, batch_size, max_iter, seed=seed + round_no)
            round_c.append(model.centroids)
            round_eta.append(model.per_cluster_avg_inertia)
            for j in range(model.k):
                own = members[model.assignments == j]
                eta = float(model.per_cluster_avg_inertia[j])
                if len(own) > 1 and eta > factor * eta0:
                    if len(own) == len(members) and model.k > 1:
                        raise ClusteringError("recursive clustering made no progress")
                    k_child = child_cluster_count(eta, eta0)
                    result.splits.append((round_no, len(own), eta, k_child))
                    nxt.append((own, k_child))
                else:
                    final_c.append(model.centroids[j])
                    final_eta.append(eta)
                    final_n.append(len(own))
        result.centroids.append(np.vstack(round_c))
        result.inertia.append(np.concatenate(round_eta))
        pending = nxt

    result.rounds = round_no
    result.final_centroids = np.vstack(final_c)
    result.final_inertia = np.array(final_eta)
    result.final_sizes = np.array(final_n)
    result.training_indices = select_training_points(data, result.final_centroids)
    return result
