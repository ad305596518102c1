"""Deterministic geometric primitives for point-cloud graphs.

All neighbor searches are exact. Ties in distance are broken by ascending
source index, and a point never appears in its own neighbor row. Neighbor
rows are sorted by ascending distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SNAP_EPSILON = 1e-9  # below this distance, interpolation snaps to the neighbor


@dataclass
class PointCloud:
    """positions [N, 3] float32; optional unit normals [N, 3]; optional int labels [N]."""

    positions: np.ndarray
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or self.positions.shape[0] < 1:
            raise ValueError(f"positions must be [N>=1, 3], got {self.positions.shape}")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite values")
        n = self.positions.shape[0]
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float32)
            if self.normals.shape != (n, 3):
                raise ValueError(f"normals must be [{n}, 3], got {self.normals.shape}")
            if not np.isfinite(self.normals).all():
                raise ValueError("normals contain non-finite values")
            lengths = np.linalg.norm(self.normals.astype(np.float64), axis=1)
            if np.abs(lengths - 1.0).max() > 1e-4:
                raise ValueError("normals must have unit length within 1e-4")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if not np.issubdtype(self.labels.dtype, np.integer):
                raise ValueError("labels must be integers")
            self.labels = self.labels.astype(np.int64)
            if self.labels.shape != (n,):
                raise ValueError(f"labels must be [{n}], got {self.labels.shape}")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def subset(self, indices) -> "PointCloud":
        indices = np.asarray(indices)
        return PointCloud(
            positions=self.positions[indices],
            normals=None if self.normals is None else self.normals[indices],
            labels=None if self.labels is None else self.labels[indices],
        )


@dataclass
class NeighborGraph:
    """Per-centroid neighbor rows.

    ``neighbor_ids[i]`` are indices into the source set, sorted by ascending
    distance to centroid i (ties by ascending index); ``distances`` are the
    matching Euclidean distances. ``space`` records whether the search ran
    on point positions ("metric") or on feature vectors ("feature").
    ``fallback`` flags rows of a bounded search where no neighbor satisfied
    the distance bounds.
    """

    centroid_ids: np.ndarray
    neighbor_ids: np.ndarray
    distances: np.ndarray
    space: str
    fallback: np.ndarray | None = None

    def __post_init__(self):
        if self.space not in ("metric", "feature"):
            raise ValueError(f"space must be 'metric' or 'feature', got {self.space!r}")

    @property
    def k(self) -> int:
        return self.neighbor_ids.shape[1]


@dataclass
class SamplingSpec:
    """Neighborhood parameters: k neighbors at the given atrous rate, with
    optional distance bounds [r_min, r_max]."""

    k: int
    rate: int = 1
    r_min: float | None = None
    r_max: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.rate < 1:
            raise ValueError(f"rate must be >= 1, got {self.rate}")
        if (self.r_min is None) != (self.r_max is None):
            raise ValueError("r_min and r_max must be given together")
        if self.r_min is not None and not (0.0 <= self.r_min < self.r_max):
            raise ValueError(f"need 0 <= r_min < r_max, got [{self.r_min}, {self.r_max}]")


def _sq_dists(query: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Exact squared distances [M, N] in float64."""
    query = np.asarray(query, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if query.ndim != 2 or source.ndim != 2 or query.shape[1] != source.shape[1]:
        raise ValueError(f"row sets must be [*, D] with equal D: {query.shape} vs {source.shape}")
    if query.shape[1] <= 8:
        diff = query[:, None, :] - source[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    # High-dimensional (feature space): Gram identity, clipped at zero.
    qq = np.einsum("ij,ij->i", query, query)
    ss = np.einsum("ij,ij->i", source, source)
    d2 = qq[:, None] + ss[None, :] - 2.0 * (query @ source.T)
    return np.maximum(d2, 0.0)


def _sorted_neighbors(d2: np.ndarray, kmax: int) -> np.ndarray:
    """Indices of the kmax smallest entries per row, by (distance, index).

    Partition-based fast path; rows with an exact distance tie at the
    partition boundary fall back to a full sort so the result is always
    identical to sorting every candidate.
    """
    m, n = d2.shape
    if kmax >= n - 1 or kmax >= 64:
        order = np.argsort(d2, axis=1, kind="stable")
        return order[:, :kmax]
    part = np.argpartition(d2, kmax - 1, axis=1)
    cand = part[:, :kmax]
    cand_d = np.take_along_axis(d2, cand, axis=1)
    rest_d = np.take_along_axis(d2, part[:, kmax:], axis=1)
    boundary_tie = cand_d.max(axis=1) >= rest_d.min(axis=1)
    order = np.lexsort((cand, cand_d), axis=-1)
    ids = np.take_along_axis(cand, order, axis=1)
    if boundary_tie.any():
        rows = np.nonzero(boundary_tie)[0]
        full = np.argsort(d2[rows], axis=1, kind="stable")
        ids[rows] = full[:, :kmax]
    return ids


def knn(query_rows, source_rows, kmax: int, query_ids=None, space: str = "metric") -> NeighborGraph:
    """Exact k-nearest-neighbor rows of each query among the source rows.

    ``query_ids`` gives each query's own index in the source set; that
    index is excluded from its row (a point is never its own neighbor).
    Pass ``query_ids=None`` when the queries are not source points.
    """
    query = np.asarray(query_rows, dtype=np.float64)
    source = np.asarray(source_rows, dtype=np.float64)
    if source.shape[0] < 1:
        raise ValueError("empty source set")
    d2 = _sq_dists(query, source)
    m, n = d2.shape
    if query_ids is not None:
        query_ids = np.asarray(query_ids, dtype=np.int64)
        if query_ids.shape != (m,):
            raise ValueError(f"query_ids must be [{m}], got {query_ids.shape}")
        d2[np.arange(m), query_ids] = np.inf
        available = n - 1
    else:
        available = n
    if not 1 <= kmax <= available:
        raise ValueError(f"kmax={kmax} outside [1, {available}] available neighbors")
    ids = _sorted_neighbors(d2, kmax)
    dist = np.sqrt(np.take_along_axis(d2, ids, axis=1))
    centroid_ids = query_ids if query_ids is not None else np.arange(m, dtype=np.int64)
    return NeighborGraph(
        centroid_ids=centroid_ids,
        neighbor_ids=ids.astype(np.int64),
        distances=dist,
        space=space,
    )


def atrous_select(graph: NeighborGraph, k: int, rate: int) -> NeighborGraph:
    """Keep every rate-th neighbor: 1-based sorted positions r, 2r, ..., kr.

    Positions past the end of the row clamp to the farthest available
    neighbor, so requesting [q2, q4, q6] from 4 neighbors yields
    [q2, q4, q4].
    """
    if k < 1 or rate < 1:
        raise ValueError(f"need k >= 1 and rate >= 1, got k={k} rate={rate}")
    cols = np.minimum(np.arange(1, k + 1) * rate - 1, graph.k - 1)
    return NeighborGraph(
        centroid_ids=graph.centroid_ids,
        neighbor_ids=graph.neighbor_ids[:, cols],
        distances=graph.distances[:, cols],
        space=graph.space,
        fallback=graph.fallback,
    )


def farthest_point_sample(rows, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy maximin subset of ``m`` row indices.

    Starts at ``seed_index``; each step adds the point maximizing the
    minimum distance to the selected set, ties to the lowest index. Pass
    positions for a metric-space selection or feature vectors for a
    feature-space one.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"rows must be 2-D, got {rows.shape}")
    n = rows.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m={m} outside [1, {n}]")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index={seed_index} outside [0, {n})")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed_index
    min_d2 = np.full(n, np.inf)
    current = seed_index
    for i in range(1, m):
        diff = rows - rows[current]
        np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff), out=min_d2)
        min_d2[selected[: i]] = -1.0  # never reselect
        current = int(np.argmax(min_d2))
        selected[i] = current
    return selected


def bounded_knn(
    query_rows,
    source_rows,
    k: int,
    r_min: float,
    r_max: float,
    query_ids=None,
    space: str = "metric",
) -> NeighborGraph:
    """k nearest neighbors restricted to distances in [r_min, r_max].

    Rows with fewer than k qualifying neighbors are padded by repeating
    the farthest qualifying one; rows with none fall back to the
    unrestricted nearest neighbor and are flagged in ``fallback``.
    """
    if not (0.0 <= r_min < r_max):
        raise ValueError(f"need 0 <= r_min < r_max, got [{r_min}, {r_max}]")
    query = np.asarray(query_rows, dtype=np.float64)
    source = np.asarray(source_rows, dtype=np.float64)
    if source.shape[0] < 1:
        raise ValueError("empty source set")
    d2 = _sq_dists(query, source)
    m, n = d2.shape
    if query_ids is not None:
        query_ids = np.asarray(query_ids, dtype=np.int64)
        d2[np.arange(m), query_ids] = np.inf
        if k > n - 1:
            raise ValueError(f"k={k} exceeds {n - 1} available neighbors")
    elif k > n:
        raise ValueError(f"k={k} exceeds {n} available neighbors")
    order = np.argsort(d2, axis=1, kind="stable")
    dist_sorted = np.sqrt(np.take_along_axis(d2, order, axis=1))
    ids = np.empty((m, k), dtype=np.int64)
    dist = np.empty((m, k), dtype=np.float64)
    fallback = np.zeros(m, dtype=bool)
    for i in range(m):
        row_d = dist_sorted[i]
        ok = np.nonzero((row_d >= r_min) & (row_d <= r_max))[0]
        if ok.size == 0:
            ids[i] = order[i, 0]
            dist[i] = row_d[0]
            fallback[i] = True
            continue
        take = ok[:k]
        if take.size < k:
            take = np.concatenate([take, np.repeat(take[-1], k - take.size)])
        ids[i] = order[i, take]
        dist[i] = row_d[take]
    centroid_ids = query_ids if query_ids is not None else np.arange(m, dtype=np.int64)
    return NeighborGraph(
        centroid_ids=centroid_ids,
        neighbor_ids=ids,
        distances=dist,
        space=space,
        fallback=fallback,
    )


def idw_weights(query_pos, neighbor_pos) -> np.ndarray:
    """Inverse-distance weights of one query against its k neighbors.

    w_j = (1/d_j) / sum_i (1/d_i); if any neighbor sits closer than
    SNAP_EPSILON the weight snaps to 1.0 on the closest such neighbor.
    Weights sum to 1 exactly in the snap case and to float rounding
    otherwise.
    """
    query = np.asarray(query_pos, dtype=np.float64).reshape(-1)
    neighbors = np.asarray(neighbor_pos, dtype=np.float64)
    if neighbors.ndim != 2 or neighbors.shape[1] != query.shape[0]:
        raise ValueError(f"neighbors must be [k, {query.shape[0]}], got {neighbors.shape}")
    d = np.linalg.norm(neighbors - query, axis=1)
    return _idw_from_distances(d[None, :])[0]


def _idw_from_distances(d: np.ndarray) -> np.ndarray:
    """Vectorized IDW over rows of distances [N, k]."""
    w = np.zeros_like(d)
    snap = (d < SNAP_EPSILON).any(axis=1)
    if snap.any():
        closest = np.argmin(d[snap], axis=1)
        w[np.nonzero(snap)[0], closest] = 1.0
    regular = ~snap
    if regular.any():
        inv = 1.0 / d[regular]
        w[regular] = inv / inv.sum(axis=1, keepdims=True)
    return w


def random_dropout(cloud: PointCloud, keep_ratio: float, rng: np.random.Generator) -> PointCloud:
    """Keep a uniform random subset of round(N * keep_ratio) points.

    Sampling is without replacement; surviving points keep their original
    relative order, labels, and normals.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    n_keep = max(1, int(round(cloud.n * keep_ratio)))
    if n_keep == cloud.n:
        return cloud
    idx = rng.choice(cloud.n, size=n_keep, replace=False)
    idx.sort()
    return cloud.subset(idx)


def canonical_seed(rows) -> int:
    """Index of the row farthest from the mean: a permutation-covariant
    FPS seed (the same physical point is chosen however the rows are
    ordered, assuming distinct distances)."""
    rows = np.asarray(rows, dtype=np.float64)
    center = rows.mean(axis=0)
    diff = rows - center
    return int(np.argmax(np.einsum("ij,ij->i", diff, diff)))
