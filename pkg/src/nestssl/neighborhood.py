"""Exact k-nearest-neighbor search from embeddings into the labeled set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRICS = ("euclidean", "cosine")


@dataclass(frozen=True)
class NeighborIndex:
    ids: np.ndarray
    embeddings: np.ndarray
    labels: np.ndarray
    metric: str = "euclidean"

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class NeighborSet:
    """Neighbors of one query, nearest first; ties go to the smaller labeled id."""

    query_id: int | None
    ids: np.ndarray
    distances: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)


def build_index(ids, embeddings, labels, metric: str = "euclidean") -> NeighborIndex:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise ValueError("cannot build an index over zero entries")
    try:
        emb = np.array(embeddings, dtype=np.float64)
    except ValueError:
        raise ValueError("embeddings have mixed dimensions") from None
    if emb.ndim != 2:
        raise ValueError("embeddings have mixed dimensions")
    labels = np.asarray(labels)
    if emb.shape[0] != len(ids) or labels.shape[0] != len(ids):
        raise ValueError("ids, embeddings and labels must have equal length")
    if len(np.unique(ids)) != len(ids):
        raise ValueError("duplicate ids in index")
    emb.setflags(write=False)
    return NeighborIndex(ids.copy(), emb, labels.copy(), metric)


def pairwise_distances(index: NeighborIndex, queries: np.ndarray) -> np.ndarray:
    """Distance matrix of shape ``(n_queries, len(index))``."""
    Q = np.asarray(queries, dtype=np.float64)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.shape[1] != index.dim:
        raise ValueError(f"query dimension {Q.shape[1]} != index dimension {index.dim}")
    E = index.embeddings
    if index.metric == "euclidean":
        diff = Q[:, None, :] - E[None, :, :]
        return np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
    qn = np.linalg.norm(Q, axis=1)
    en = np.linalg.norm(E, axis=1)
    denom = np.outer(qn, en)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, (Q @ E.T) / np.where(denom > 0, denom, 1.0), 0.0)
    return 1.0 - np.clip(cos, -1.0, 1.0)


def _order(dist_row: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    # lexsort uses the last key as primary
    return np.lexsort((ids, dist_row))[:k]


def query_knn(index: NeighborIndex, v, k: int, query_id: int | None = None) -> NeighborSet:
    if not 1 <= k <= len(index):
        raise ValueError(f"k must lie in [1, {len(index)}], got {k}")
    dist = pairwise_distances(index, v)[0]
    pos = _order(dist, index.ids, k)
    return NeighborSet(query_id, index.ids[pos], dist[pos], index.labels[pos])


def query_knn_batch(index: NeighborIndex, V, k: int, query_ids=None, chunk: int = 512):
    """Neighbor positions and distances for many queries.

    Returns ``(positions, distances)`` each of shape ``(n_queries, k)``;
    positions index into the index arrays. Same ordering as :func:`query_knn`.
    """
    if not 1 <= k <= len(index):
        raise ValueError(f"k must lie in [1, {len(index)}], got {k}")
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[0]
    positions = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    # sort by (distance, id): pre-sorting columns by id makes a stable argsort
    # on distance resolve ties by ascending id
    id_order = np.argsort(index.ids, kind="stable")
    for start in range(0, n, chunk):
        dist = pairwise_distances(index, V[start:start + chunk])[:, id_order]
        sel = np.argsort(dist, axis=1, kind="stable")[:, :k]
        positions[start:start + chunk] = id_order[sel]
        distances[start:start + chunk] = np.take_along_axis(dist, sel, axis=1)
    return positions, distances
