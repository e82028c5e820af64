"""LightGCN graph convolution and its incremental estimate.

Representations are dense ``(n_nodes, dim)`` float64 arrays; the 0th layer is the
embedding table itself. Layer outputs are combined by a uniform mean over the
``L + 1`` layers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateDegree, DimensionMismatch
from .graph import DegreeLedger, IncrementalGraph


@dataclass
class RepresentationSet:
    layers: list[np.ndarray]  # e^(0) .. e^(L)
    final: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.layers) - 1


def layer_mean(layers: list[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(layers[0])
    for x in layers:
        out += x
    return out / len(layers)


def inv_sqrt(deg: np.ndarray) -> np.ndarray:
    deg = np.asarray(deg, dtype=np.float64)
    out = np.zeros_like(deg)
    pos = deg > 0
    out[pos] = 1.0 / np.sqrt(deg[pos])
    return out


def normalized_adjacency(graph: IncrementalGraph) -> sp.csr_matrix:
    s = inv_sqrt(graph.degree)
    d = sp.diags(s)
    return (d @ graph.adjacency @ d).tocsr()


def _check_emb(graph: IncrementalGraph, emb: np.ndarray) -> np.ndarray:
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] != graph.n_nodes:
        raise DimensionMismatch(f"embedding table of shape {emb.shape} for a graph of {graph.n_nodes} nodes")
    return emb


def full_propagate(graph: IncrementalGraph, emb: np.ndarray, n_layers: int) -> RepresentationSet:
    """Plain LightGCN propagation; isolated nodes aggregate to zero."""
    x = _check_emb(graph, emb)
    a_hat = normalized_adjacency(graph)
    layers = [x]
    for _ in range(n_layers):
        x = a_hat @ x
        layers.append(x)
    return RepresentationSet(layers, layer_mean(layers))


def degree_sync(d_old, d_new, beta: float, for_normalization: bool = False):
    """Synchronised degree ``beta * d_old + d_new`` (scalar or array)."""
    d = beta * np.asarray(d_old, dtype=np.float64) + np.asarray(d_new, dtype=np.float64)
    if for_normalization and np.any(d <= 0):
        raise DegenerateDegree("synchronised degree is not positive")
    return float(d) if d.ndim == 0 else d


def synced_inv_sqrt(d_old: np.ndarray, d_new: np.ndarray, beta: float) -> np.ndarray:
    """``1/sqrt(d')`` per node; nodes whose synchronised degree is exactly zero get 0."""
    d = degree_sync(d_old, d_new, beta)
    d = np.atleast_1d(d)
    if np.any(d < 0):
        raise DegenerateDegree(f"negative synchronised degree (beta={beta})")
    return inv_sqrt(d)


def filter_means(filters: np.ndarray) -> tuple[float, float]:
    """Mean pooling over filters collapses a bank of 2-tap filters to one (old, new) weight pair."""
    filters = np.asarray(filters, dtype=np.float64)
    if filters.ndim != 2 or filters.shape[1] != 2 or filters.shape[0] < 1:
        raise DimensionMismatch(f"filter bank must have shape (F, 2), got {filters.shape}")
    return float(filters[:, 0].mean()), float(filters[:, 1].mean())


def aggregate(old_term: np.ndarray, new_term: np.ndarray, filters: np.ndarray) -> np.ndarray:
    old_term = np.asarray(old_term, dtype=np.float64)
    new_term = np.asarray(new_term, dtype=np.float64)
    if old_term.shape != new_term.shape:
        raise DimensionMismatch(f"{old_term.shape} vs {new_term.shape}")
    filters = np.asarray(filters, dtype=np.float64)
    filter_means(filters)
    out = np.zeros_like(old_term)
    for w_old, w_new in filters:
        out += w_old * old_term + w_new * new_term
    return out / len(filters)


@dataclass
class FrozenLayerBank:
    """Per-layer old representations scaled by sqrt(accumulated degree); read-only."""

    scaled: np.ndarray  # (L, n_nodes, dim) holding layers 1..L
    stage: int

    def __post_init__(self):
        self.scaled = np.array(self.scaled, dtype=np.float64)
        self.scaled.setflags(write=False)

    @classmethod
    def from_layers(cls, layers: list[np.ndarray], degree: np.ndarray, stage: int) -> "FrozenLayerBank":
        root = np.sqrt(np.asarray(degree, dtype=np.float64))[:, None]
        return cls(np.stack([root * x for x in layers[1:]]) if len(layers) > 1
                   else np.zeros((0,) + layers[0].shape), stage)

    @classmethod
    def zeros(cls, n_layers: int, n_nodes: int, dim: int, stage: int) -> "FrozenLayerBank":
        return cls(np.zeros((n_layers, n_nodes, dim)), stage)

    @property
    def n_layers(self) -> int:
        return self.scaled.shape[0]

    def layer(self, l: int) -> np.ndarray:
        """Scaled old representation of layer ``l`` (1-based)."""
        return self.scaled[l - 1]


def as_layer_filters(filters: np.ndarray, n_layers: int) -> np.ndarray:
    filters = np.asarray(filters, dtype=np.float64)
    if filters.ndim == 2:
        filters = np.broadcast_to(filters, (n_layers,) + filters.shape)
    if filters.ndim != 3 or filters.shape[0] != n_layers or filters.shape[2] != 2:
        raise DimensionMismatch(f"expected filters of shape ({n_layers}, F, 2), got {filters.shape}")
    return filters


def igc_layer(graph: IncrementalGraph, ledger: DegreeLedger, beta: float, filters: np.ndarray,
              current: np.ndarray, frozen_next: np.ndarray) -> np.ndarray:
    """One incremental convolution layer for all nodes.

    ``frozen_next`` is the sqrt-degree-scaled old representation of the layer being produced.
    """
    current = _check_emb(graph, current)
    if frozen_next.shape != current.shape:
        raise DimensionMismatch(f"frozen layer {frozen_next.shape} vs current {current.shape}")
    s = synced_inv_sqrt(ledger.accumulated, graph.degree, beta)
    new_term = graph.adjacency @ (s[:, None] * current)
    w_old, w_new = filter_means(filters)
    return s[:, None] * (w_old * frozen_next + w_new * new_term)


def igc_propagate(graph: IncrementalGraph, ledger: DegreeLedger, beta: float, filters: np.ndarray,
                  emb: np.ndarray, frozen: FrozenLayerBank, n_layers: int) -> RepresentationSet:
    x = _check_emb(graph, emb)
    if frozen.n_layers < n_layers:
        raise DimensionMismatch(f"frozen bank holds {frozen.n_layers} layers, need {n_layers}")
    per_layer = as_layer_filters(filters, n_layers)
    layers = [x]
    for l in range(n_layers):
        x = igc_layer(graph, ledger, beta, per_layer[l], x, frozen.layer(l + 1))
        layers.append(x)
    return RepresentationSet(layers, layer_mean(layers))


def predict(r_u: np.ndarray, r_i: np.ndarray) -> float:
    r_u = np.asarray(r_u, dtype=np.float64)
    r_i = np.asarray(r_i, dtype=np.float64)
    if r_u.shape != r_i.shape:
        raise DimensionMismatch(f"{r_u.shape} vs {r_i.shape}")
    return float(r_u @ r_i)
