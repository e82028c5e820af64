"""Independent brute-force reference computations used by the tests."""
import math

import numpy as np


def random_edges(rng, n_users, n_items, p=0.3):
    edges = [(u, n_users + i) for u in range(n_users) for i in range(n_items) if rng.random() < p]
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def dense_adjacency(edges, n_nodes):
    A = np.zeros((n_nodes, n_nodes))
    for u, i in edges:
        A[u, i] = A[i, u] = 1.0
    return A


def dense_normalized(A):
    d = A.sum(axis=1)
    s = np.array([1.0 / math.sqrt(x) if x > 0 else 0.0 for x in d])
    return s[:, None] * A * s[None, :]


def dense_layers(edges, n_nodes, E, L):
    """(D^-1/2 A D^-1/2)^l E for l = 0..L via explicit matrix powers."""
    P = dense_normalized(dense_adjacency(edges, n_nodes))
    return [np.linalg.matrix_power(P, l) @ E for l in range(L + 1)]


def igc_straight_line(adj_lists, d_old, d_new, beta, filters, E, scaled_frozen, L):
    """Per-node loops over the incremental convolution and uniform layer mean."""
    n, D = E.shape
    layers = [E.copy()]
    for l in range(L):
        w = filters[l]
        prev = layers[-1]
        nxt = np.zeros((n, D))
        for i in range(n):
            dp_i = beta * d_old[i] + d_new[i]
            if dp_i == 0:
                continue
            new_sum = np.zeros(D)
            for j in adj_lists[i]:
                new_sum += prev[j] / math.sqrt(beta * d_old[j] + d_new[j])
            pooled = np.zeros(D)
            for w_old, w_new in w:
                pooled += w_old * scaled_frozen[l][i] + w_new * new_sum
            nxt[i] = pooled / len(w) / math.sqrt(dp_i)
        layers.append(nxt)
    final = sum(layers) / (L + 1)
    return layers, final


def knn_sorted(queries, cands, cand_ids, K):
    out = []
    for q in queries:
        scored = sorted((math.sqrt(sum((a - b) ** 2 for a, b in zip(q, c))), idx) for c, idx in zip(cands, cand_ids))
        out.append([idx for _, idx in scored[:K]])
    return out


def recall_ref(ranked, truth, k):
    top = np.asarray(ranked[:k])
    return float(np.isin(top, list(truth)).sum()) / len(truth)


def ndcg_ref(ranked, truth, k):
    gains = np.array([1.0 if x in truth else 0.0 for x in ranked[:k]])
    discounts = np.log2(np.arange(2, len(gains) + 2))
    dcg = float((gains / discounts).sum())
    ideal = np.ones(min(len(truth), k)) / np.log2(np.arange(2, min(len(truth), k) + 2))
    return dcg / float(ideal.sum())


def igc_reduction_instance(rng, dim=4):
    """Old graph plus a stage whose edges only join probe users to brand-new items.

    Every old neighbour of a probe is inactive in the new stage and every new
    neighbour has no history, so one incremental layer at a probe must equal a
    full convolution layer on the union graph.
    """
    from cigcn.graph import DegreeLedger, IncrementalGraph, update_ledger

    n_old_u, n_new_u = int(rng.integers(2, 6)), int(rng.integers(0, 4))
    n_old_i, n_new_i = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    n_users = n_old_u + n_new_u
    n_nodes = n_users + n_old_i + n_new_i
    old_items = np.arange(n_users, n_users + n_old_i)
    new_items = np.arange(n_users + n_old_i, n_nodes)
    probes = rng.choice(n_old_u, size=int(rng.integers(1, n_old_u + 1)), replace=False)

    old_edges = {(u, int(i)) for u in range(n_old_u) for i in old_items if rng.random() < 0.5}
    for u in probes:
        old_edges.add((int(u), int(rng.choice(old_items))))
    new_edges = set()
    for u in probes:
        for i in rng.choice(new_items, size=int(rng.integers(1, len(new_items) + 1)), replace=False):
            new_edges.add((int(u), int(i)))
    for u in range(n_old_u, n_users):
        for i in new_items:
            if rng.random() < 0.5:
                new_edges.add((u, int(i)))

    g_old = IncrementalGraph.from_edges(0, np.array(sorted(old_edges)), n_nodes, n_users)
    g_new = IncrementalGraph.from_edges(1, np.array(sorted(new_edges)), n_nodes, n_users)
    union = IncrementalGraph.from_edges(1, np.array(sorted(old_edges | new_edges)), n_nodes, n_users)
    ledger = update_ledger(DegreeLedger.empty(n_nodes), g_old)
    E = rng.normal(size=(n_nodes, dim))
    return g_old, g_new, union, ledger, E, probes


def ci_objective_instance(rng, n_users=4, n_items=6, dim=4, n_layers=2, K=2, n_filters=2, lam=0.05):
    """Random 10-node incremental problem: IGC + indirect CED mixing + BPR + L2."""
    from cigcn.ced import KnnTable, knn, mixing_matrix
    from cigcn.training import IGCObjective

    n = n_users + n_items
    while True:
        edges = random_edges(rng, n_users, n_items, 0.35)
        A = dense_adjacency(edges, n)
        d_new = A.sum(axis=1)
        active = d_new > 0
        items_active = np.flatnonzero(active[n_users:]) + n_users
        if len(edges) >= 3 and (~active).sum() >= 2 and len(items_active) >= 2:
            if any(len(set(items_active) - {i for u2, i in edges if u2 == u}) for u, _ in edges):
                break
    d_old = rng.integers(0, 4, size=n).astype(float)
    d_old[~active] = np.maximum(d_old[~active], 1)
    frozen = rng.normal(size=(n_layers, n, dim)) * (d_old > 0)[None, :, None]
    # indirect mixing: active nodes pull from K same-type inactive nodes
    old = rng.normal(size=(n, dim))
    nodes = np.arange(n)
    neigh, dists, queries = [], [], []
    for part in (nodes < n_users, nodes >= n_users):
        q, c = np.flatnonzero(part & active), np.flatnonzero(part & ~active)
        t = knn(old[q], old[c], K, q, c)
        queries.extend(q.tolist())
        neigh.extend(t.neighbors)
        dists.extend(t.distances)
    table = KnnTable(np.array(queries), neigh, dists, 0)
    M = mixing_matrix(table, float(rng.uniform(0.2, 0.9)), nodes)
    obj = IGCObjective(A, d_old, d_new, frozen, n_layers, lam, mixing=M, active=active)

    pos = {(int(u), int(i)) for u, i in edges}
    triples = []
    for u, i in edges:
        negs = [j for j in items_active if (u, int(j)) not in pos]
        if negs:
            triples.append((u, i, int(rng.choice(negs))))
    params = {
        "emb": rng.normal(scale=0.5, size=(n, dim)),
        "beta": np.array(rng.uniform(0.3, 1.5)),
        "filters": rng.normal(loc=1.0, scale=0.3, size=(n_layers, n_filters, 2)),
    }
    return obj, params, np.array(triples, dtype=np.int64), active


def central_differences(fn, params, h=1e-5):
    """Numerical gradient of a scalar ``fn(params)`` for every entry of every array."""
    out = {}
    for k, v in params.items():
        g = np.zeros(np.shape(v))
        flat = v.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            up = fn(params)
            flat[idx] = keep - h
            down = fn(params)
            flat[idx] = keep
            g.reshape(-1)[idx] = (up - down) / (2 * h)
        out[k] = g
    return out


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def fine_tune_reduction(ckpt, config):
    """Checkpoint copy and config under which incremental retraining degenerates to fine-tuning.

    beta = 0 drops the accumulated degree, filters (0, 1) drop the old-representation term,
    the zeroed frozen bank removes what is left of history and gamma = 1 disables CED.
    """
    from dataclasses import replace

    from cigcn.ced import CedConfig
    from cigcn.propagation import FrozenLayerBank

    filters = np.zeros_like(ckpt.filters)
    filters[..., 1] = 1.0
    reduced = replace(ckpt, beta=0.0, filters=filters,
                      frozen=FrozenLayerBank(np.zeros_like(ckpt.frozen.scaled), ckpt.stage))
    cfg = replace(config, train_beta=False, train_filters=False, ced=CedConfig(config.ced.K, 1.0, 1.0))
    return reduced, cfg
