import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duplex.graph import (ConfigError, DiGraph, LinkSplit, Relation, classify_edges, ham_lookup,
                          sample_batch, sample_non_edges, split_edges, split_nodes)

from conftest import random_digraph


@st.composite
def digraphs(draw, max_nodes=9):
    n = draw(st.integers(2, max_nodes))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
    return DiGraph.from_edges(n, [(u, v) for u, v in pairs])


def test_rejects_self_loops_and_duplicates():
    with pytest.raises(ValueError):
        DiGraph(3, [(0, 0)])
    with pytest.raises(ValueError):
        DiGraph(3, [(0, 1), (0, 1)])
    with pytest.raises(IndexError):
        DiGraph(3, [(0, 3)])


def test_from_edges_cleans_input():
    g = DiGraph.from_edges(3, [(0, 1), (0, 1), (2, 2), (1, 2)])
    assert g.num_edges == 2


def test_ham_lookup_relations():
    g = DiGraph(2, [(0, 1)])
    assert ham_lookup(g, 0, 1).rel == Relation.FORWARD and ham_lookup(g, 0, 1).prototype == 1j
    assert ham_lookup(g, 1, 0).rel == Relation.REVERSE and ham_lookup(g, 1, 0).prototype == -1j
    assert ham_lookup(DiGraph(2, [(0, 1), (1, 0)]), 0, 1).prototype == 1
    assert ham_lookup(DiGraph(2, []), 0, 1).rel == Relation.NO_EDGE
    with pytest.raises(ValueError):
        ham_lookup(g, 1, 1)


def test_prototype_bijection():
    protos = {r: r.prototype for r in Relation}
    assert protos == {Relation.FORWARD: 1j, Relation.REVERSE: -1j, Relation.BIDIRECTIONAL: 1,
                      Relation.NO_EDGE: 0}


@settings(max_examples=40, deadline=None)
@given(digraphs())
def test_graph_invariants(g):
    n = g.num_nodes
    assert g.out_degree.sum() == g.in_degree.sum() == g.num_edges
    edge_set = {tuple(e) for e in g.edges.tolist()}
    for u in range(n):
        assert {(u, int(v)) for v in g.out_adj(u)} == {e for e in edge_set if e[0] == u}
        assert {(int(v), u) for v in g.in_adj(u)} == {e for e in edge_set if e[1] == u}
    H = g.dense_ham()
    np.testing.assert_array_equal(H, H.conj().T)
    for u in range(n):
        for v in range(n):
            if u != v:
                a, b = ham_lookup(g, u, v), ham_lookup(g, v, u)
                assert a.prototype == np.conj(b.prototype)
                assert (a.rel == Relation.FORWARD) == (b.rel == Relation.REVERSE)
                assert H[u, v] == a.prototype


def test_reversed_swaps_relations(medium_graph):
    r = medium_graph.reversed()
    u, v = medium_graph.edges[0]
    assert r.has_edge(v, u)
    np.testing.assert_array_equal(r.dense_ham(), medium_graph.dense_ham().conj())


def test_split_twenty_edges():
    g = random_digraph(15, 20, seed=1)
    s = split_edges(g, (16, 1, 3), seed=0)
    assert s.counts == {"train": 16, "val": 1, "test": 3}


def test_split_rounding_rule():
    g = random_digraph(400, 4715, seed=2)
    assert split_edges(g, seed=0).counts == {"train": 3773, "val": 235, "test": 707}


def test_split_is_partition_and_deterministic(medium_graph):
    a, b = split_edges(medium_graph, seed=5), split_edges(medium_graph, seed=5)
    for x, y in zip((a.train_edges, a.val_edges, a.test_edges), (b.train_edges, b.val_edges, b.test_edges)):
        np.testing.assert_array_equal(x, y)
    every = np.concatenate([a.train_edges, a.val_edges, a.test_edges])
    assert len({tuple(e) for e in every.tolist()}) == medium_graph.num_edges == len(every)
    held = np.concatenate([a.val_edges, a.test_edges])
    assert not a.train_graph.has_edges(held[:, 0], held[:, 1]).any()
    assert split_edges(medium_graph, seed=6).train_edges.tolist() != a.train_edges.tolist()


def test_split_errors():
    g = random_digraph(15, 20, seed=1)
    with pytest.raises(ConfigError):
        split_edges(g, (16, 0, 3))
    with pytest.raises(ValueError):
        split_edges(random_digraph(10, 10), (16, 1, 3))


def test_split_nodes_balanced():
    g = DiGraph(10, [], labels=np.array([0] * 5 + [1] * 5))
    tr, va, te = split_nodes(g, seed=0)
    assert (len(tr), len(va), len(te)) == (6, 2, 2)
    for c in (0, 1):
        assert [int((g.labels[p] == c).sum()) for p in (tr, va, te)] == [3, 1, 1]
    again = split_nodes(g, seed=0)
    for x, y in zip((tr, va, te), again):
        np.testing.assert_array_equal(x, y)


def test_split_nodes_citeseer_sizes():
    labels = np.random.default_rng(0).integers(0, 6, 3312)
    tr, va, te = split_nodes(DiGraph(3312, [], labels=labels), seed=0)
    assert (len(tr), len(va), len(te)) == (1988, 662, 662)
    assert len(np.unique(np.concatenate([tr, va, te]))) == 3312


def test_split_nodes_small_class_warns():
    g = DiGraph(8, [], labels=np.array([0] * 6 + [1] * 2))
    with pytest.warns(UserWarning):
        split_nodes(g)


def test_sample_batch_single_edge():
    g = DiGraph(4, [(0, 1)])
    b = sample_batch(LinkSplit.full(g), 1.0, seed=0)
    assert b.counts() == {"FORWARD": 1, "REVERSE": 1, "BIDIRECTIONAL": 0, "NO_EDGE": 1}
    assert b.pairs[:2].tolist() == [[0, 1], [1, 0]]


def test_sample_batch_labels_and_counts(medium_graph):
    split = split_edges(medium_graph, seed=0)
    uni, bi = classify_edges(split.train_edges, split.train_graph)
    for seed in range(50):
        for x in (0.0, 0.5, 1.0):
            b = sample_batch(split, x, seed)
            c = b.counts()
            assert c["FORWARD"] == c["REVERSE"] == c["NO_EDGE"] == len(uni)
            assert c["BIDIRECTIONAL"] == min(int(np.floor(x * len(uni))), len(bi))
    b = sample_batch(split, 1.0, 0)
    for (u, v), r in zip(b.pairs, b.labels):
        if r == Relation.NO_EDGE:
            assert ham_lookup(medium_graph, u, v).rel == Relation.NO_EDGE
        else:
            assert ham_lookup(split.train_graph, u, v).rel == r


def test_sample_batch_rejects_x_above_one(medium_graph):
    with pytest.raises(ConfigError):
        sample_batch(LinkSplit.full(medium_graph), 1.5)


def test_dense_graph_rejection_limit():
    n = 30
    full = [(u, v) for u in range(n) for v in range(n) if u != v]
    g = DiGraph(n, full[:-1])   # a single ordered pair left, but its reverse is an edge
    with pytest.raises(RuntimeError):
        sample_non_edges(g, 5, np.random.default_rng(0))
