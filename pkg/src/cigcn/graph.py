"""Per-stage bipartite graphs, accumulated degree ledger, active/inactive split."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import IndexOutOfRange, NonContiguousStages, StageMismatch
from .ingest import IdMap, StageDataset


@dataclass(frozen=True)
class IncrementalGraph:
    """Symmetric user-item adjacency in CSR form over the unified node index space."""

    stage_index: int
    n_nodes: int
    n_users: int
    indptr: np.ndarray
    indices: np.ndarray

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr).astype(np.int64)

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes))

    def edges(self) -> np.ndarray:
        """Each undirected edge once, as (user, item) rows sorted lexicographically."""
        rows = np.repeat(np.arange(self.n_nodes, dtype=np.int64), np.diff(self.indptr))
        mask = rows < self.n_users
        return np.stack([rows[mask], self.indices[mask]], axis=1)

    @classmethod
    def from_edges(cls, stage_index: int, edges: np.ndarray, n_nodes: int, n_users: int) -> "IncrementalGraph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            edges = np.unique(edges, axis=0)
            u, i = edges[:, 0], edges[:, 1]
            if u.min() < 0 or u.max() >= n_users or i.min() < n_users or i.max() >= n_nodes:
                raise IndexOutOfRange("edge endpoint outside the user or item index range")
        else:
            u = i = np.zeros(0, dtype=np.int64)
        rows = np.concatenate([u, i])
        cols = np.concatenate([i, u])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_nodes), out=indptr[1:])
        return cls(stage_index, n_nodes, n_users, indptr, cols)


def build_incremental_graph(stage: StageDataset, idmap: IdMap | None = None) -> IncrementalGraph:
    idmap = idmap or stage.idmap
    return IncrementalGraph.from_edges(stage.stage_index, stage.pairs, idmap.n_nodes, idmap.user_count)


@dataclass(frozen=True)
class DegreeLedger:
    """One accumulated degree per node, folded over stages ``0..upto_stage``."""

    accumulated: np.ndarray
    upto_stage: int = -1

    @classmethod
    def empty(cls, n_nodes: int) -> "DegreeLedger":
        return cls(np.zeros(n_nodes, dtype=np.int64), -1)

    @property
    def n_nodes(self) -> int:
        return len(self.accumulated)


def update_ledger(ledger: DegreeLedger, graph: IncrementalGraph) -> DegreeLedger:
    if graph.stage_index != ledger.upto_stage + 1:
        raise StageMismatch(f"ledger covers stages up to {ledger.upto_stage}, graph is stage {graph.stage_index}")
    if ledger.n_nodes != graph.n_nodes:
        raise StageMismatch("ledger and graph disagree on node count")
    return DegreeLedger(ledger.accumulated + graph.degree, graph.stage_index)


def union_graph(graphs: Sequence[IncrementalGraph]) -> IncrementalGraph:
    """Set union of stage edge sets (a pair seen in several stages is one edge)."""
    if not graphs:
        raise NonContiguousStages("no graphs given")
    for k, g in enumerate(graphs):
        if g.stage_index != k:
            raise NonContiguousStages(f"expected stage {k}, got {g.stage_index}")
    g0 = graphs[0]
    edges = np.concatenate([g.edges() for g in graphs])
    return IncrementalGraph.from_edges(graphs[-1].stage_index, edges, g0.n_nodes, g0.n_users)


@dataclass(frozen=True)
class ActivePartition:
    active: np.ndarray
    inactive: np.ndarray

    def mask(self, n_nodes: int) -> np.ndarray:
        m = np.zeros(n_nodes, dtype=bool)
        m[self.active] = True
        return m


def partition_active(graph: IncrementalGraph, all_nodes: int | None = None) -> ActivePartition:
    n = graph.n_nodes if all_nodes is None else all_nodes
    deg = np.zeros(n, dtype=np.int64)
    deg[:graph.n_nodes] = graph.degree[:n]
    return ActivePartition(np.flatnonzero(deg > 0), np.flatnonzero(deg == 0))
