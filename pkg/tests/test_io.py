import json

import numpy as np
import pytest

from duplex import io
from duplex.graph import DiGraph, Relation, ham_lookup, split_edges

from conftest import DATA_DIR, random_digraph


def test_edge_list_read_back(tmp_path):
    p = tmp_path / "g.edges"
    p.write_text("# comment\n0 1\n1 0\n0\t2\n")
    g = io.load_edge_list(p)
    assert (g.num_nodes, g.num_edges) == (3, 3)
    assert ham_lookup(g, 0, 1).rel == Relation.BIDIRECTIONAL


def test_empty_edge_list_with_declared_nodes(tmp_path):
    p = tmp_path / "e.edges"
    p.write_text("")
    g = io.load_edge_list(p, num_nodes=5)
    assert (g.num_nodes, g.num_edges) == (5, 0)


def test_edge_list_errors(tmp_path):
    p = tmp_path / "bad.edges"
    p.write_text("0 1\n1 x\n")
    with pytest.raises(io.ParseError, match=":2:"):
        io.load_edge_list(p)
    p.write_text("0 1\n1 7\n")
    with pytest.raises(IndexError):
        io.load_edge_list(p, num_nodes=5)


def test_edge_list_remaps_and_dedups(tmp_path):
    p = tmp_path / "g.edges"
    p.write_text("10 20\n10 20\n20 30\n")
    g = io.load_edge_list(p)
    assert (g.num_nodes, g.num_edges) == (3, 2)
    assert g.edges.tolist() == [[0, 1], [1, 2]]


def test_features_round_trip(tmp_path):
    g = DiGraph(2, [(0, 1)], features=np.array([[0.1, -2.5], [3.0, 1e-9]]), labels=np.array([1, 0]))
    p = tmp_path / "g.csv"
    io.write_features_labels(p, g)
    back = io.load_features_labels(p, DiGraph(2, [(0, 1)]))
    np.testing.assert_array_equal(back.features, g.features)
    np.testing.assert_array_equal(back.labels, g.labels)


def test_features_errors(tmp_path):
    g = DiGraph(3, [])
    p = tmp_path / "f.csv"
    p.write_text("0,1,0.5\n1,0,0.1\n")
    with pytest.raises(io.ParseError, match=r"\[2\]"):
        io.load_features_labels(p, g)
    p.write_text("0,1,0.5\n1,0,0.1,0.2\n2,0,1\n")
    with pytest.raises(io.ParseError):
        io.load_features_labels(p, g)


def test_linqs_direction(tmp_path):
    (tmp_path / "t.content").write_text("a 1 0 X\nb 0 1 Y\nc 1 1 X\n")
    (tmp_path / "t.cites").write_text("a b\nb c\nzz a\n")
    g = io.load_linqs(tmp_path / "t.content", tmp_path / "t.cites")
    assert g.edges.tolist() == [[1, 0], [2, 1]]   # citing -> cited
    assert g.features.shape == (3, 2) and g.labels.tolist() == [0, 1, 0]


def test_npz_layout(tmp_path):
    import scipy.sparse as sp
    adj = sp.csr_matrix(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float))
    attr = sp.csr_matrix(np.eye(3))
    np.savez(tmp_path / "toy.npz", adj_data=adj.data, adj_indices=adj.indices, adj_indptr=adj.indptr,
             adj_shape=adj.shape, attr_data=attr.data, attr_indices=attr.indices, attr_indptr=attr.indptr,
             attr_shape=attr.shape, labels=np.array([0, 1, 1]))
    g = io.load_npz(tmp_path / "toy.npz")
    assert g.num_edges == 3 and g.features.shape == (3, 3)
    kind, files = io.resolve_dataset(tmp_path / "toy.npz")
    assert kind == "npz"


def test_dataset_resolution_by_name(tmp_path, monkeypatch):
    monkeypatch.setenv(io.DATA_ENV, str(tmp_path))
    (tmp_path / "tiny.edges").write_text("0 1\n1 2\n")
    assert io.load_dataset("tiny").num_edges == 2
    with pytest.raises(FileNotFoundError):
        io.load_dataset("missing")


def test_split_files_round_trip(tmp_path):
    g = random_digraph(30, 80, seed=4)
    s = split_edges(g, seed=1)
    man = io.save_split(s, tmp_path / "s")
    assert json.loads((tmp_path / "s" / "split.json").read_text()) == man
    with pytest.raises(FileExistsError):
        io.save_split(s, tmp_path / "s")
    back = io.load_split(tmp_path / "s", g)
    np.testing.assert_array_equal(back.test_edges, s.test_edges)
    np.testing.assert_array_equal(back.train_edges, s.train_edges)


def test_embedding_file_round_trip(tmp_path, rng):
    a, t = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    io.write_embeddings(tmp_path / "e.csv", a, t)
    header = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert header == "id,a_1,a_2,a_3,theta_1,theta_2,theta_3"
    a2, t2 = io.read_embeddings(tmp_path / "e.csv")
    np.testing.assert_allclose(a2, a, atol=1e-12)
    np.testing.assert_allclose(t2, t, atol=1e-12)


def _have(name):
    try:
        io.resolve_dataset(DATA_DIR / name if DATA_DIR.is_dir() else name)
        return True
    except FileNotFoundError:
        return False


@pytest.mark.skipif(not _have("citeseer"), reason="Citeseer not available under $DUPLEX_DATA_DIR")
def test_citeseer_size():
    g = io.load_dataset(DATA_DIR / "citeseer")
    assert (g.num_nodes, g.num_edges) == (3312, 4715)
    assert g.features.shape[1] == 3703 and g.labels.max() + 1 == 6


@pytest.mark.skipif(not _have("cora_ml"), reason="Cora-ml not available under $DUPLEX_DATA_DIR")
def test_cora_ml_attributes():
    g = io.load_dataset(DATA_DIR / "cora_ml")
    assert g.features.shape[1] == 2879 and g.labels.max() + 1 == 7
