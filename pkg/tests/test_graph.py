import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cigcn.errors import IndexOutOfRange, NonContiguousStages, StageMismatch
from cigcn.graph import (
    DegreeLedger,
    IncrementalGraph,
    build_incremental_graph,
    partition_active,
    union_graph,
    update_ledger,
)
from cigcn.ingest import IdMap, StageDataset

# 2 users (0, 1) and 2 items (2, 3)
IDMAP = IdMap(["u1", "u2"], ["i1", "i2"])


def _stage(t, pairs):
    return StageDataset.from_pairs(t, pairs, IDMAP)


def test_build_basic():
    g = build_incremental_graph(_stage(0, [(0, 2), (0, 3)]))
    assert g.neighbors(0).tolist() == [2, 3]
    assert g.degree.tolist() == [2, 0, 1, 1]
    assert g.n_edges == 2


def test_build_empty_and_duplicates():
    g = build_incremental_graph(_stage(0, []))
    assert g.n_edges == 0 and g.degree.sum() == 0
    g = build_incremental_graph(_stage(0, [(0, 2), (0, 2)]))
    assert g.n_edges == 1


def test_build_rejects_bad_index():
    with pytest.raises(IndexOutOfRange):
        IncrementalGraph.from_edges(0, np.array([[0, 1]]), 4, 2)


def test_ledger_additivity():
    ledger = DegreeLedger(np.array([3, 0, 0, 0]), 0)
    g = build_incremental_graph(_stage(1, [(0, 2), (0, 3)]))
    out = update_ledger(ledger, g)
    assert out.accumulated.tolist() == [5, 0, 1, 1] and out.upto_stage == 1


def test_ledger_from_empty_and_gap():
    g0 = build_incremental_graph(_stage(0, [(1, 3)]))
    led = update_ledger(DegreeLedger.empty(4), g0)
    assert led.accumulated.tolist() == g0.degree.tolist()
    g2 = build_incremental_graph(_stage(2, [(1, 3)]))
    with pytest.raises(StageMismatch):
        update_ledger(led, g2)


def test_union_examples():
    g0 = build_incremental_graph(_stage(0, [(0, 2)]))
    g1 = build_incremental_graph(_stage(1, [(1, 3)]))
    assert union_graph([g0, g1]).n_edges == 2
    same = build_incremental_graph(_stage(1, [(0, 2)]))
    u = union_graph([g0, same])
    assert u.n_edges == 1 and u.degree.tolist() == g0.degree.tolist()
    with pytest.raises(NonContiguousStages):
        union_graph([g1])


def _check_structure(g):
    for i in range(g.n_nodes):
        for j in g.neighbors(i):
            assert i in g.neighbors(j)
            assert (i < g.n_users) != (j < g.n_users)
    users = g.degree[:g.n_users].sum()
    items = g.degree[g.n_users:].sum()
    assert users == items == g.n_edges


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_union_degrees_equal_ledger_fold(n_users, n_items, n_stages, seed):
    # disjoint stage edge sets: ledger fold and union degrees must agree
    rng = np.random.default_rng(seed)
    idmap = IdMap([f"u{k}" for k in range(n_users)], [f"i{k}" for k in range(n_items)])
    all_pairs = [(u, n_users + i) for u in range(n_users) for i in range(n_items)]
    owner = rng.integers(-1, n_stages, size=len(all_pairs))
    graphs = []
    ledger = DegreeLedger.empty(idmap.n_nodes)
    for t in range(n_stages):
        pairs = [p for p, o in zip(all_pairs, owner) if o == t]
        g = build_incremental_graph(StageDataset.from_pairs(t, pairs, idmap))
        _check_structure(g)
        graphs.append(g)
        ledger = update_ledger(ledger, g)
    union = union_graph(graphs)
    _check_structure(union)
    np.testing.assert_array_equal(union.degree, ledger.accumulated)


def test_repeated_pairs_count_in_ledger_only():
    g0 = build_incremental_graph(_stage(0, [(0, 2), (1, 3)]))
    g1 = build_incremental_graph(_stage(1, [(0, 2)]))
    ledger = update_ledger(update_ledger(DegreeLedger.empty(4), g0), g1)
    union = union_graph([g0, g1])
    assert (ledger.accumulated - union.degree).tolist() == [1, 0, 1, 0]


def test_partition():
    g = build_incremental_graph(_stage(0, [(0, 2)]))
    p = partition_active(g, 4)
    assert p.active.tolist() == [0, 2] and p.inactive.tolist() == [1, 3]
    p = partition_active(build_incremental_graph(_stage(0, [])), 4)
    assert p.active.tolist() == [] and p.inactive.tolist() == [0, 1, 2, 3]
    full = build_incremental_graph(_stage(0, [(0, 2), (0, 3), (1, 2), (1, 3)]))
    assert partition_active(full).inactive.tolist() == []
