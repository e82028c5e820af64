"""Colliding effect distillation: type-restricted exact KNN and the two mixing updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InvalidConfig


@dataclass(frozen=True)
class CedConfig:
    K: int = 15
    gamma1: float = 0.9
    gamma2: float = 0.9

    def __post_init__(self):
        if self.K < 1:
            raise InvalidConfig(f"K must be >= 1, got {self.K}")
        for name in ("gamma1", "gamma2"):
            g = getattr(self, name)
            if not 0.0 <= g <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {g}")


@dataclass(frozen=True)
class KnnTable:
    query_nodes: np.ndarray  # (Q,)
    neighbors: list[np.ndarray]  # per query, node indices by increasing distance
    distances: list[np.ndarray]
    stage: int = -1

    def __len__(self) -> int:
        return len(self.query_nodes)

    def as_dict(self) -> dict[int, list[int]]:
        return {int(q): nb.tolist() for q, nb in zip(self.query_nodes, self.neighbors)}


def knn(query_reps: np.ndarray, candidate_reps: np.ndarray, K: int,
        query_nodes: np.ndarray | None = None, candidate_nodes: np.ndarray | None = None,
        stage: int = -1, chunk: int = 128) -> KnnTable:
    """Exhaustive Euclidean K-nearest-neighbour search; ties go to the lower node index."""
    q = np.atleast_2d(np.asarray(query_reps, dtype=np.float64))
    c = np.asarray(candidate_reps, dtype=np.float64).reshape(-1, q.shape[1]) if len(candidate_reps) else \
        np.zeros((0, q.shape[1]))
    if c.ndim != 2 or c.shape[1] != q.shape[1]:
        raise DimensionMismatch(f"queries {q.shape} vs candidates {c.shape}")
    qn = np.arange(len(q)) if query_nodes is None else np.asarray(query_nodes, dtype=np.int64)
    cn = np.arange(len(c)) if candidate_nodes is None else np.asarray(candidate_nodes, dtype=np.int64)
    if len(query_reps) == 0:
        return KnnTable(qn[:0], [], [], stage)
    if len(c) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return KnnTable(qn, [empty] * len(q), [np.zeros(0)] * len(q), stage)
    # stable sort over index-sorted candidates realises the tie rule
    order_c = np.argsort(cn, kind="stable")
    c, cn = c[order_c], cn[order_c]
    k = min(K, len(c))
    neighbors, distances = [], []
    for start in range(0, len(q), chunk):
        block = q[start:start + chunk]
        sq = ((block[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        part = np.argpartition(sq, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(sq, part, axis=1).max(axis=1)
        # rows with a tie at the cut need the full candidate set at that distance
        tied = (sq <= kth[:, None]).sum(axis=1) > k
        vals = np.take_along_axis(sq, part, axis=1)
        part = np.take_along_axis(part, np.lexsort((part, vals), axis=-1), axis=1)
        for row in range(len(block)):
            if tied[row]:
                cand = np.flatnonzero(sq[row] <= kth[row])
                idx = cand[np.argsort(sq[row, cand], kind="stable")[:k]]
            else:
                idx = part[row]
            neighbors.append(cn[idx])
            distances.append(np.sqrt(sq[row, idx]))
    return KnnTable(qn, neighbors, distances, stage)


def ced_update(r: np.ndarray, neighbors: np.ndarray, gamma: float) -> np.ndarray:
    """``gamma * r + (1 - gamma) * mean(neighbors)``; identity for gamma == 1 or no neighbours."""
    r = np.asarray(r, dtype=np.float64)
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if gamma == 1.0 or neighbors.size == 0:
        return r.copy()
    neighbors = neighbors.reshape(-1, r.shape[-1])
    return gamma * r + ((1.0 - gamma) / len(neighbors)) * neighbors.sum(axis=0)


def direct_update(r_m: np.ndarray, neighbors: np.ndarray, gamma1: float) -> np.ndarray:
    """Refresh an inactive node from its nearest active nodes (inference time)."""
    return ced_update(r_m, neighbors, gamma1)


def indirect_update(r_n: np.ndarray, neighbors: np.ndarray, gamma2: float) -> np.ndarray:
    """Mix an active node with its nearest inactive nodes (training time)."""
    return ced_update(r_n, neighbors, gamma2)


def apply_table(reps: np.ndarray, table: KnnTable, gamma: float) -> np.ndarray:
    """Return a copy of ``reps`` with every query row of ``table`` CED-updated."""
    out = reps.copy()
    if gamma == 1.0:
        return out
    for q, nb in zip(table.query_nodes, table.neighbors):
        out[q] = ced_update(reps[q], reps[nb], gamma)
    return out


def mixing_matrix(table: KnnTable, gamma: float, nodes: np.ndarray) -> sp.csr_matrix:
    """Linear map ``R -> R~`` over the local node list ``nodes`` (must contain every table node)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    n = len(nodes)
    order = np.argsort(nodes)

    def local(v):
        return order[np.searchsorted(nodes, v, sorter=order)]

    diag = np.ones(n)
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [diag]
    if gamma != 1.0 and len(table):
        counts = np.array([len(nb) for nb in table.neighbors])
        has = counts > 0
        q = local(np.asarray(table.query_nodes)[has])
        diag[q] = gamma
        nb = [x for x, h in zip(table.neighbors, has) if h]
        if nb:
            flat = local(np.concatenate(nb))
            rows.append(np.repeat(q, counts[has]))
            cols.append(flat)
            vals.append(np.repeat((1.0 - gamma) / counts[has], counts[has]))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def type_restricted_knn(old_reps: np.ndarray, query_mask: np.ndarray, candidate_mask: np.ndarray,
                        n_users: int, K: int, stage: int = -1) -> KnnTable:
    """KNN where user queries see only user candidates and item queries only item candidates."""
    n = len(old_reps)
    is_user = np.arange(n) < n_users
    tables = []
    for side in (is_user, ~is_user):
        qn = np.flatnonzero(query_mask & side)
        cn = np.flatnonzero(candidate_mask & side)
        if len(qn):
            tables.append(knn(old_reps[qn], old_reps[cn], K, qn, cn, stage))
    qnodes = np.concatenate([t.query_nodes for t in tables]) if tables else np.zeros(0, dtype=np.int64)
    neighbors = [nb for t in tables for nb in t.neighbors]
    distances = [d for t in tables for d in t.distances]
    return KnnTable(qnodes, neighbors, distances, stage)
