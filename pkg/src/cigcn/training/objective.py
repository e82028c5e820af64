"""BPR objectives with analytic gradients.

Two models share the same loss head:

* ``LightGCNObjective``: plain propagation ``R = mean_l A_hat^l E`` on a fixed graph.
* ``IGCObjective``: incremental convolution with a trainable degree weight and
  aggregator filters, followed by a fixed linear CED mixing map.

Both operate on a local node numbering (rows of ``E``) chosen by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..errors import DegenerateDegree, ExhaustedUniverse, InactiveBatchNode
from ..propagation import inv_sqrt


def bpr_loss(score_pos, score_neg):
    """``-ln sigmoid(pos - neg)``, evaluated without overflow."""
    return np.logaddexp(0.0, -(np.asarray(score_pos, dtype=np.float64) - score_neg))


class NegativeSampler:
    """Uniform negatives from ``universe`` excluding each user's positives."""

    def __init__(self, pairs: np.ndarray, universe: np.ndarray, n_nodes: int):
        self.universe = np.unique(np.asarray(universe, dtype=np.int64))
        self.n_nodes = n_nodes
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self._codes = np.unique(pairs[:, 0] * n_nodes + pairs[:, 1])
        in_universe = np.isin(pairs[:, 1], self.universe)
        users, counts = np.unique(np.unique(pairs[in_universe], axis=0)[:, 0], return_counts=True) \
            if in_universe.any() else (np.zeros(0, np.int64), np.zeros(0, np.int64))
        self._exhausted = set(users[counts >= len(self.universe)].tolist())

    def is_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        codes = users * self.n_nodes + items
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, len(self._codes) - 1)
        return self._codes[pos] == codes if len(self._codes) else np.zeros(len(codes), dtype=bool)

    def sample(self, users, rng: np.random.Generator) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        if len(self.universe) == 0 or any(int(u) in self._exhausted for u in np.unique(users)):
            raise ExhaustedUniverse("a user has interacted with every item in the sampling universe")
        out = self.universe[rng.integers(0, len(self.universe), size=len(users))]
        bad = np.flatnonzero(self.is_positive(users, out))
        while len(bad):
            out[bad] = self.universe[rng.integers(0, len(self.universe), size=len(bad))]
            bad = bad[self.is_positive(users[bad], out[bad])]
        return out


def sample_negatives(stage, user: int, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Draw ``n`` items the user did not interact with in ``stage`` (universe: the stage's items)."""
    sampler = NegativeSampler(stage.pairs, stage.pairs[:, 1], stage.idmap.n_nodes)
    return sampler.sample(np.full(n, user, dtype=np.int64), rng)


@dataclass
class BatchResult:
    loss: float
    per_example: np.ndarray
    grads: dict[str, np.ndarray]


def _bpr_head(R: np.ndarray, triples: np.ndarray):
    u, i, j = triples[:, 0], triples[:, 1], triples[:, 2]
    ru, diff = R[u], R[i] - R[j]
    margin = np.einsum("bd,bd->b", ru, diff)
    per = bpr_loss(margin, 0.0)
    coef = -expit(-margin)[:, None]
    G = np.zeros_like(R)
    # sequential scatter keeps accumulation order fixed
    np.add.at(G, u, coef * diff)
    np.add.at(G, i, coef * ru)
    np.add.at(G, j, -coef * ru)
    return per, G


def _l2(E: np.ndarray, triples: np.ndarray, lam: float):
    rows = np.unique(triples)
    g = np.zeros_like(E)
    if lam == 0.0:
        return 0.0, g
    g[rows] = 2.0 * lam * E[rows]
    return lam * float(np.sum(E[rows] ** 2)), g


class LightGCNObjective:
    def __init__(self, adjacency: sp.spmatrix, n_layers: int, lam: float = 0.0):
        adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
        s = inv_sqrt(np.asarray(adjacency.sum(axis=1)).ravel())
        self.a_hat = (sp.diags(s) @ adjacency @ sp.diags(s)).tocsr()
        self.a_hat_t = self.a_hat.T.tocsr()
        self.n_layers = n_layers
        self.lam = lam

    def representations(self, E: np.ndarray) -> np.ndarray:
        x, acc = E, E.copy()
        for _ in range(self.n_layers):
            x = self.a_hat @ x
            acc += x
        return acc / (self.n_layers + 1)

    def __call__(self, params: dict[str, np.ndarray], triples: np.ndarray) -> BatchResult:
        E = params["emb"]
        R = self.representations(E)
        per, GR = _bpr_head(R, triples)
        reg, g_reg = _l2(E, triples, self.lam)
        # dR/dE^T applied to GR: sum_k (A_hat^T)^k GR / (L + 1), Horner form
        acc = GR.copy()
        for _ in range(self.n_layers):
            acc = self.a_hat_t @ acc + GR
        gE = acc / (self.n_layers + 1) + g_reg
        return BatchResult(float(per.sum()) + reg, per, {"emb": gE})


class IGCObjective:
    """Incremental convolution over a local subgraph with constant old-representation terms.

    ``frozen`` holds the sqrt-degree-scaled old layers 1..L for the local nodes,
    ``mixing`` is the CED map applied to final representations before scoring.
    """

    def __init__(self, adjacency: sp.spmatrix, d_old: np.ndarray, d_new: np.ndarray, frozen: np.ndarray,
                 n_layers: int, lam: float = 0.0, mixing: sp.spmatrix | None = None,
                 active: np.ndarray | None = None):
        self.adj = sp.csr_matrix(adjacency, dtype=np.float64)
        self.adj_t = self.adj.T.tocsr()
        self.d_old = np.asarray(d_old, dtype=np.float64)
        self.d_new = np.asarray(d_new, dtype=np.float64)
        self.frozen = np.asarray(frozen, dtype=np.float64)
        self.n_layers = n_layers
        self.lam = lam
        n = len(self.d_old)
        self.mixing = sp.identity(n, format="csr") if mixing is None else sp.csr_matrix(mixing)
        self.mixing_t = self.mixing.T.tocsr()
        self.active = self.d_new > 0 if active is None else np.asarray(active, dtype=bool)

    def _norm(self, beta: float):
        dp = beta * self.d_old + self.d_new
        if np.any(dp < 0):
            raise DegenerateDegree(f"negative synchronised degree (beta={beta})")
        s = inv_sqrt(dp)
        return s

    def forward(self, params: dict[str, np.ndarray]):
        E = params["emb"]
        beta = float(params["beta"])
        filters = params["filters"]
        s = self._norm(beta)[:, None]
        w_old = filters[:, :, 0].mean(axis=1)
        w_new = filters[:, :, 1].mean(axis=1)
        X, Y = [E], []
        for l in range(self.n_layers):
            y = self.adj @ (s * X[-1])
            Y.append(y)
            X.append(s * (w_old[l] * self.frozen[l] + w_new[l] * y))
        R = X[0].copy()
        for x in X[1:]:
            R += x
        R /= self.n_layers + 1
        return {"s": s, "X": X, "Y": Y, "w_old": w_old, "w_new": w_new, "R": R, "Rt": self.mixing @ R}

    def representations(self, params) -> np.ndarray:
        return self.forward(params)["Rt"]

    def __call__(self, params: dict[str, np.ndarray], triples: np.ndarray) -> BatchResult:
        if not self.active[triples].all():
            raise InactiveBatchNode("batch contains a node that is inactive in this stage")
        cache = self.forward(params)
        E, s, X, Y = params["emb"], cache["s"], cache["X"], cache["Y"]
        w_old, w_new = cache["w_old"], cache["w_new"]
        per, G_tilde = _bpr_head(cache["Rt"], triples)
        reg, g_reg = _l2(E, triples, self.lam)

        L = self.n_layers
        direct = (self.mixing_t @ G_tilde) / (L + 1)
        g = direct.copy()
        g_s = np.zeros(len(s))
        g_old = np.zeros(L)
        g_new = np.zeros(L)
        for l in range(L - 1, -1, -1):
            # X[l+1] = s * (w_old S + w_new Y),  Y = A (s * X[l])
            inner = w_old[l] * self.frozen[l] + w_new[l] * Y[l]
            g_s += np.einsum("nd,nd->n", g, inner)
            gs_x = s * g
            g_old[l] = float(np.sum(gs_x * self.frozen[l]))
            g_new[l] = float(np.sum(gs_x * Y[l]))
            z = self.adj_t @ (w_new[l] * gs_x)
            g_s += np.einsum("nd,nd->n", z, X[l])
            g = s * z + direct
        gE = g + g_reg

        # d s / d beta = -1/2 dp^{-3/2} d_old = -1/2 s^3 d_old  (zero where s == 0)
        s1 = s[:, 0]
        g_beta = float(np.sum(g_s * (-0.5 * s1 ** 3 * self.d_old)))
        filters = params["filters"]
        F = filters.shape[1]
        g_filters = np.zeros_like(filters)
        g_filters[:, :, 0] = (g_old / F)[:, None]
        g_filters[:, :, 1] = (g_new / F)[:, None]
        return BatchResult(float(per.sum()) + reg, per,
                           {"emb": gE, "beta": np.array(g_beta), "filters": g_filters})
