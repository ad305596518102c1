"""Hierarchical point-cloud layers built on the autodiff primitives.

Shapes: features are [N, C] tensors aligned row-for-row with positions
[N, 3]. Every layer is a pure function of its inputs plus the layer's
parameters; neighbor graphs are data, not state.

Search spaces follow the architecture contract: atrous graph convolution
searches feature space by default (graphs rebuilt on the current features
each forward), while pooling/unpooling neighborhoods are metric-space and
depend only on positions, so they can be precomputed per cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import LinearParams, Tensor
from .geometry import (
    NeighborGraph,
    _idw_from_distances,
    atrous_select,
    bounded_knn,
    farthest_point_sample,
    knn,
)


@dataclass
class PacLayer:
    """Atrous edge convolution: for each point, take the (rate, 2*rate, ...,
    k*rate)-th nearest neighbors, build edge features x_p (+) (x_p - x_q),
    push them through a shared linear+ReLU kernel, and max-pool over the k
    edges. ``params.weight`` is [2*C_in, C_out]."""

    params: LinearParams
    k: int
    rate: int = 1
    search_space: str = "feature"

    def __post_init__(self):
        if self.search_space not in ("feature", "metric"):
            raise ValueError(f"search_space must be 'feature' or 'metric', got {self.search_space!r}")
        if self.params.c_in % 2 != 0:
            raise ValueError("PAC weight rows must be 2*C_in (edge features are concatenated pairs)")

    @property
    def c_in(self) -> int:
        return self.params.c_in // 2

    @property
    def c_out(self) -> int:
        return self.params.c_out


@dataclass
class EpLayer:
    """Subsampling by farthest-point selection plus neighborhood max-pooling.

    ``mode`` controls the output row: "both" concatenates the centroid's own
    feature with the neighborhood max (width 2C), "centroid" and "neighbors"
    keep only the respective half (width C).
    """

    k: int
    subsample_rate: int
    mode: str = "both"

    def __post_init__(self):
        if self.mode not in ("both", "centroid", "neighbors"):
            raise ValueError(f"mode must be both|centroid|neighbors, got {self.mode!r}")
        if self.subsample_rate < 1:
            raise ValueError(f"subsample_rate must be >= 1, got {self.subsample_rate}")

    def out_width(self, c_in: int) -> int:
        return 2 * c_in if self.mode == "both" else c_in


@dataclass
class EuLayer:
    """Unpooling: inverse-distance-weighted interpolation from the previous
    (coarser) hierarchy, concatenated after the encoder skip feature."""

    k_interp: int


def pac_graph(layer: PacLayer, features: Tensor, positions: np.ndarray | None = None,
              bounds: tuple[float, float] | None = None) -> NeighborGraph:
    """Build the layer's atrous neighbor graph on current features (or on
    positions for a metric-space layer). ``bounds`` switches to the
    radius-bounded search used by the robustness harness."""
    if layer.search_space == "metric":
        if positions is None:
            raise ValueError("metric-space PAC needs positions")
        rows = positions
    else:
        rows = features.data
    n = rows.shape[0]
    kmax = min(layer.k * layer.rate, n - 1)
    if kmax < 1:
        raise ValueError(f"cannot build a neighbor graph over {n} point(s)")
    ids = np.arange(n, dtype=np.int64)
    if bounds is None:
        graph = knn(rows, rows, kmax, query_ids=ids, space=layer.search_space)
    else:
        graph = bounded_knn(rows, rows, kmax, bounds[0], bounds[1], query_ids=ids,
                            space=layer.search_space)
    return atrous_select(graph, layer.k, layer.rate)


def pac_forward(features: Tensor, layer: PacLayer, positions: np.ndarray | None = None,
                bounds: tuple[float, float] | None = None) -> Tensor:
    """[N, C_in] -> [N, C_out]; graph rebuilt from the current features."""
    n, c = features.shape
    if c != layer.c_in:
        raise ValueError(f"PAC expects width {layer.c_in}, got {c}")
    graph = pac_graph(layer, features, positions=positions, bounds=bounds)
    k = graph.k
    neighbors = ad.gather_rows(features, graph.neighbor_ids)      # [N, k, C]
    centers = ad.expand_rows(features, k)                          # [N, k, C]
    nf = ad.reshape(neighbors, (n * k, c))
    cf = ad.reshape(centers, (n * k, c))
    edge = ad.concat([cf, ad.sub(cf, nf)])                         # [N*k, 2C]
    h = ad.relu(ad.apply_linear(edge, layer.params))               # [N*k, C_out]
    return ad.reduce_max(ad.reshape(h, (n, k, layer.c_out)), axis=1)


def select_centroids(positions: np.ndarray, layer: EpLayer, fps_seed: int = 0,
                     feature_rows: np.ndarray | None = None) -> np.ndarray:
    """Farthest-point centroid indices for one EP stage: N // rate points,
    chosen on positions (static) or on feature rows when given (dynamic)."""
    n = positions.shape[0]
    m = n // layer.subsample_rate
    if m < 1:
        raise ValueError(f"subsample rate {layer.subsample_rate} leaves no points from {n}")
    rows = positions if feature_rows is None else feature_rows
    return farthest_point_sample(rows, m, seed_index=fps_seed)


def ep_graph(positions: np.ndarray, centroid_ids: np.ndarray, k: int) -> NeighborGraph:
    """Metric-space kNN of each centroid over the full input point set.

    k clamps to the available neighbor count so heavily thinned clouds
    (e.g. dropout robustness runs) still pool."""
    k = min(k, positions.shape[0] - 1)
    return knn(positions[centroid_ids], positions, k, query_ids=centroid_ids, space="metric")


def ep_forward(features: Tensor, positions: np.ndarray, layer: EpLayer,
               fps_seed: int = 0, centroid_ids: np.ndarray | None = None,
               graph: NeighborGraph | None = None) -> tuple[Tensor, np.ndarray]:
    """Pool [N, C] down to the centroid set; returns (features', centroid_ids).

    Precomputed ``centroid_ids``/``graph`` (from ``select_centroids`` /
    ``ep_graph``) can be passed to reuse the static geometry.
    """
    if centroid_ids is None:
        centroid_ids = select_centroids(positions, layer, fps_seed=fps_seed)
    if graph is None:
        graph = ep_graph(positions, centroid_ids, layer.k)
    pooled = ad.reduce_max(ad.gather_rows(features, graph.neighbor_ids), axis=1)
    if layer.mode == "neighbors":
        return pooled, centroid_ids
    centers = ad.gather_rows(features, centroid_ids)
    if layer.mode == "centroid":
        return centers, centroid_ids
    return ad.concat([centers, pooled]), centroid_ids


def css_forward(features: Tensor, positions: np.ndarray, centroid_ids: np.ndarray,
                k: int, graph: NeighborGraph | None = None) -> Tensor:
    """Chained-skip subsampling: neighbors-only max at the same centroids
    the matching EP stage selected."""
    if graph is None:
        graph = ep_graph(positions, centroid_ids, k)
    return ad.reduce_max(ad.gather_rows(features, graph.neighbor_ids), axis=1)


def interpolation_graph(prev_positions: np.ndarray, target_positions: np.ndarray,
                        k_interp: int) -> tuple[NeighborGraph, np.ndarray]:
    """Metric kNN of each target among the previous hierarchy's points plus
    the IDW weights. k clamps to the previous hierarchy's size. A target
    coinciding with a previous point gets weight 1 on it (snap rule)."""
    k = min(k_interp, prev_positions.shape[0])
    graph = knn(target_positions, prev_positions, k, query_ids=None, space="metric")
    weights = _idw_from_distances(graph.distances)
    return graph, weights


def interpolate(prev_features: Tensor, graph: NeighborGraph, weights: np.ndarray) -> Tensor:
    gathered = ad.gather_rows(prev_features, graph.neighbor_ids)   # [N, k, C]
    return ad.reduce_sum(ad.scale_rows(gathered, weights), axis=1)


def eu_forward(prev_features: Tensor, prev_positions: np.ndarray,
               target_positions: np.ndarray, skip_features: Tensor,
               layer: EuLayer, graph: NeighborGraph | None = None,
               weights: np.ndarray | None = None) -> Tensor:
    """skip (+) IDW-interpolated previous features; [N_target, C_skip + C_prev]."""
    if graph is None or weights is None:
        graph, weights = interpolation_graph(prev_positions, target_positions, layer.k_interp)
    if skip_features.shape[0] != target_positions.shape[0]:
        raise ValueError(
            f"skip features {skip_features.shape} must align with {target_positions.shape[0]} targets"
        )
    return ad.concat([skip_features, interpolate(prev_features, graph, weights)])


def csu_forward(prev_features: Tensor, prev_positions: np.ndarray,
                target_positions: np.ndarray, k_interp: int,
                graph: NeighborGraph | None = None,
                weights: np.ndarray | None = None) -> Tensor:
    """Chained-skip upsampling: the interpolation half of EU, no skip concat."""
    if graph is None or weights is None:
        graph, weights = interpolation_graph(prev_positions, target_positions, k_interp)
    return interpolate(prev_features, graph, weights)


def global_max_pool(features: Tensor) -> Tensor:
    """Columnwise max over all rows: [N, C] -> [1, C]."""
    if features.ndim != 2:
        raise ValueError(f"global_max_pool wants [N, C], got {features.shape}")
    return ad.reshape(ad.reduce_max(features, axis=0), (1, features.shape[1]))
