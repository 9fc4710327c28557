"""Locally scaled k-nearest-neighbor similarity graphs.

Neighbor search is an exhaustive scan with exact Euclidean distances and
ties broken by lower index. Self is never its own neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DegenerateScaleError

# float64 elements held by one block of pairwise differences
_BLOCK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class GraphConfig:
    """Neighbor count for edges (``n_neighbors``) and rank used for the local scale."""

    n_neighbors: int = 10
    scale_rank: int = 10

    def validate(self, n: int) -> None:
        N, M = self.n_neighbors, self.scale_rank
        if not (1 <= M <= N < n):
            raise ConfigurationError(
                f"need 1 <= scale_rank ({M}) <= n_neighbors ({N}) < n ({n})"
            )


def _check_features(features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ConfigurationError(f"features must be a non-empty n x d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("features contain non-finite values")
    return X


def _smallest_k(sq: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k smallest entries per row, ties to lower index."""
    part = np.argpartition(sq, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(sq, part, axis=1).max(axis=1)
    out = np.empty((sq.shape[0], k), dtype=np.int64)
    n_at_or_below = np.count_nonzero(sq <= kth[:, None], axis=1)
    clean = n_at_or_below == k
    if np.any(clean):
        rows = np.flatnonzero(clean)
        cand = part[rows]
        vals = np.take_along_axis(sq[rows], cand, axis=1)
        # order by (value, index): stable sort on index, then on value
        key = np.argsort(cand, axis=1, kind="stable")
        cand = np.take_along_axis(cand, key, axis=1)
        vals = np.take_along_axis(vals, key, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        out[rows] = np.take_along_axis(cand, order, axis=1)
    for r in np.flatnonzero(~clean):
        out[r] = np.argsort(sq[r], kind="stable")[:k]
    return out


def _knn_squared(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n, d = X.shape
    if not (1 <= k < n):
        raise ConfigurationError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")

    indices = np.empty((n, k), dtype=np.int64)
    sqdist = np.empty((n, k), dtype=np.float64)
    rows_per_block = max(1, _BLOCK_ELEMENTS // (n * d))
    for lo in range(0, n, rows_per_block):
        hi = min(n, lo + rows_per_block)
        diff = X[lo:hi, None, :] - X[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        sq[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        idx = _smallest_k(sq, k)
        indices[lo:hi] = idx
        sqdist[lo:hi] = np.take_along_axis(sq, idx, axis=1)
    return indices, sqdist


def knn_search(features, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors of every point, self excluded.

    Returns
    -------
    indices : (n, k) int64
        Neighbor indices sorted by nondecreasing distance, ties by index.
    distances : (n, k) float64
        Euclidean distances matching ``indices``.
    """
    indices, sqdist = _knn_squared(_check_features(features), k)
    return indices, np.sqrt(sqdist)


def scales_from_knn(distances: np.ndarray, scale_rank: int) -> np.ndarray:
    tau = distances[:, scale_rank - 1].copy()
    bad = np.flatnonzero(tau <= 0.0)
    if bad.size:
        raise DegenerateScaleError(bad[0])
    return tau


def local_scales(features, scale_rank: int) -> np.ndarray:
    """Distance from each point to its ``scale_rank``-th nearest other point."""
    _, dist = knn_search(features, scale_rank)
    return scales_from_knn(dist, scale_rank)


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Symmetric weighted graph in CSR form with sorted neighbor lists.

    Each unordered edge stores one weight, mirrored into both rows, so
    ``w[i, j] == w[j, i]`` holds exactly. ``normalized`` carries
    ``w_ij / sqrt(d_i d_j)`` aligned with ``indices``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    degrees: np.ndarray
    normalized: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    @cached_property
    def rows(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.n, self.n))

    def normalized_adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.normalized, self.indices, self.indptr), shape=(self.n, self.n))

    def edge_list(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unordered edges as ``(i, j, w)`` arrays with ``i < j``."""
        mask = self.rows < self.indices
        return self.rows[mask], self.indices[mask], self.weights[mask]

    @classmethod
    def from_edges(cls, n: int, i, j, w) -> "NeighborGraph":
        """Build from unordered edges; each pair must appear once with ``i != j``."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        if np.any(i == j):
            raise ConfigurationError("self-loops are not allowed")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        if np.unique(lo * n + hi).size != lo.size:
            raise ConfigurationError("duplicate edge")
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        vals = np.concatenate([w, w])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        degrees = np.bincount(rows, weights=vals, minlength=n)
        with np.errstate(divide="ignore", invalid="ignore"):
            normalized = vals / np.sqrt(degrees[rows] * degrees[cols])
        return cls(indptr, cols, vals, degrees, normalized)


def build_graph(features, cfg: GraphConfig | None = None) -> NeighborGraph:
    """Union-of-neighborhoods graph with self-tuning Gaussian weights.

    ``i`` and ``j`` are joined when either is among the other's
    ``n_neighbors`` nearest points; the weight is
    ``exp(-|x_i - x_j|^2 / (tau_i tau_j))`` with ``tau`` from
    :func:`local_scales`.
    """
    cfg = cfg or GraphConfig()
    X = _check_features(features)
    n = X.shape[0]
    cfg.validate(n)
    k = max(cfg.n_neighbors, cfg.scale_rank)
    nbr, sqdist = _knn_squared(X, k)
    tau = scales_from_knn(np.sqrt(sqdist), cfg.scale_rank)

    src = np.repeat(np.arange(n, dtype=np.int64), cfg.n_neighbors)
    dst = nbr[:, : cfg.n_neighbors].ravel()
    # squared distances are bitwise symmetric, so either endpoint's copy will do
    sq = sqdist[:, : cfg.n_neighbors].ravel()
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    _, first = np.unique(lo * n + hi, return_index=True)
    lo, hi, sq = lo[first], hi[first], sq[first]
    w = np.exp(-sq / (tau[lo] * tau[hi]))
    graph = NeighborGraph.from_edges(n, lo, hi, w)
    assert np.all(graph.degrees > 0), "isolated vertex"
    return graph


def laplacian(graph: NeighborGraph) -> sp.csr_matrix:
    """Symmetric normalized Laplacian ``I - D^{-1/2} W D^{-1/2}``."""
    return (sp.identity(graph.n, format="csr") - graph.normalized_adjacency()).tocsr()
