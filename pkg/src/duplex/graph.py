"""Directed graphs, Hermitian adjacency relations, splits and pair sampling."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np

log = logging.getLogger(__name__)

MAX_REJECTIONS = 10**6


class ConfigError(ValueError):
    pass


class Relation(IntEnum):
    FORWARD = 0
    REVERSE = 1
    BIDIRECTIONAL = 2
    NO_EDGE = 3

    @property
    def prototype(self) -> complex:
        return PROTOTYPES[self]


PROTOTYPES = {
    Relation.FORWARD: 1j,
    Relation.REVERSE: -1j,
    Relation.BIDIRECTIONAL: 1 + 0j,
    Relation.NO_EDGE: 0j,
}


@dataclass(frozen=True)
class HamEntry:
    rel: Relation

    @property
    def prototype(self) -> complex:
        return PROTOTYPES[self.rel]


def _csr(keys: np.ndarray, values: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((values, keys))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, keys + 1, 1)
    return np.cumsum(indptr), values[order]


class DiGraph:
    """Immutable directed graph on nodes ``0..num_nodes-1``.

    Edges are stored sorted and deduplicated; self-loops are rejected.
    """

    def __init__(self, num_nodes: int, edges, features=None, labels=None):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if num_nodes < 0:
            raise ValueError("num_nodes must be non-negative")
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise IndexError(f"edge endpoint out of range for {num_nodes} nodes")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loop edges are not allowed")
        keys = edges[:, 0] * max(num_nodes, 1) + edges[:, 1]
        uniq, first = np.unique(keys, return_index=True)
        if len(uniq) != len(keys):
            raise ValueError(f"{len(keys) - len(uniq)} duplicate edges")
        self.num_nodes = int(num_nodes)
        self.edges = edges[first]
        self.edges.setflags(write=False)
        self._keys = uniq
        if features is not None:
            features = np.asarray(features, dtype=np.float64)
            if features.shape[0] != num_nodes:
                raise ValueError("features need one row per node")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (num_nodes,):
                raise ValueError("labels need one entry per node")
        self.features = features
        self.labels = labels

    @classmethod
    def from_edges(cls, num_nodes: int, edges, features=None, labels=None) -> "DiGraph":
        """Build a graph, silently dropping self-loops and duplicate edges."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            log.info("dropped %d self-loops", int(loops.sum()))
            edges = edges[~loops]
        uniq = np.unique(edges, axis=0)
        if len(uniq) != len(edges):
            log.info("dropped %d duplicate edges", len(edges) - len(uniq))
        return cls(num_nodes, uniq, features, labels)

    def __repr__(self):
        return f"DiGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _out(self):
        return _csr(self.edges[:, 0], self.edges[:, 1], self.num_nodes)

    @cached_property
    def _in(self):
        return _csr(self.edges[:, 1], self.edges[:, 0], self.num_nodes)

    def out_adj(self, u: int) -> np.ndarray:
        ptr, idx = self._out
        return idx[ptr[u]:ptr[u + 1]]

    def in_adj(self, u: int) -> np.ndarray:
        ptr, idx = self._in
        return idx[ptr[u]:ptr[u + 1]]

    @cached_property
    def out_degree(self) -> np.ndarray:
        return np.diff(self._out[0])

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.diff(self._in[0])

    def has_edges(self, src, dst) -> np.ndarray:
        """Vectorised membership test for ordered pairs."""
        keys = np.asarray(src, dtype=np.int64) * max(self.num_nodes, 1) + np.asarray(dst, dtype=np.int64)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, max(len(self._keys) - 1, 0))
        if not len(self._keys):
            return np.zeros(keys.shape, dtype=bool)
        return self._keys[pos] == keys

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.has_edges([u], [v])[0])

    def relations(self, src, dst) -> np.ndarray:
        """HAM relation of each ordered pair, as :class:`Relation` codes."""
        fwd = self.has_edges(src, dst)
        rev = self.has_edges(dst, src)
        out = np.full(fwd.shape, int(Relation.NO_EDGE), dtype=np.int64)
        out[fwd & ~rev] = Relation.FORWARD
        out[rev & ~fwd] = Relation.REVERSE
        out[fwd & rev] = Relation.BIDIRECTIONAL
        return out

    def reversed(self) -> "DiGraph":
        return DiGraph(self.num_nodes, self.edges[:, ::-1], self.features, self.labels)

    def with_attributes(self, features=None, labels=None) -> "DiGraph":
        return DiGraph(self.num_nodes, self.edges,
                       self.features if features is None else features,
                       self.labels if labels is None else labels)

    def subgraph(self, nodes) -> tuple["DiGraph", np.ndarray]:
        """Induced subgraph on ``nodes`` (renumbered in sorted order) and the kept ids."""
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        e = remap[self.edges]
        e = e[(e >= 0).all(axis=1)]
        feats = None if self.features is None else self.features[nodes]
        labels = None if self.labels is None else self.labels[nodes]
        return DiGraph(len(nodes), e, feats, labels), nodes

    def permuted(self, perm) -> "DiGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.argsort(perm)
        feats = None if self.features is None else self.features[inv]
        labels = None if self.labels is None else self.labels[inv]
        return DiGraph(self.num_nodes, perm[self.edges], feats, labels)

    def dense_ham(self) -> np.ndarray:
        """Full complex HAM; for small graphs and tests only."""
        h = np.zeros((self.num_nodes, self.num_nodes), dtype=complex)
        u, v = self.edges[:, 0], self.edges[:, 1]
        h[u, v] += 1j
        h[v, u] += -1j
        both = self.has_edges(v, u)
        h[u[both], v[both]] = 1.0
        return h


def ham_lookup(graph: DiGraph, u: int, v: int) -> HamEntry:
    if u == v:
        raise ValueError("the HAM diagonal is not part of the reconstruction target")
    if not (0 <= u < graph.num_nodes and 0 <= v < graph.num_nodes):
        raise IndexError(f"node out of range: ({u}, {v})")
    return HamEntry(Relation(int(graph.relations([u], [v])[0])))


# ------------------------------------------------------------------- splits

@dataclass
class LinkSplit:
    train_edges: np.ndarray
    val_edges: np.ndarray
    test_edges: np.ndarray
    graph: DiGraph
    seed: int | None = None
    ratio: tuple = (16, 1, 3)
    train_graph: DiGraph = field(init=False)

    def __post_init__(self):
        self.train_graph = DiGraph(self.graph.num_nodes, self.train_edges,
                                   self.graph.features, self.graph.labels)

    @classmethod
    def full(cls, graph: DiGraph) -> "LinkSplit":
        """Every edge in train; used for transductive embedding of a whole graph."""
        empty = np.zeros((0, 2), dtype=np.int64)
        return cls(graph.edges.copy(), empty, empty.copy(), graph, None, (1, 0, 0))

    @property
    def counts(self) -> dict:
        return {"train": len(self.train_edges), "val": len(self.val_edges), "test": len(self.test_edges)}


def _split_sizes(n: int, ratio) -> tuple[int, int, int]:
    tot = sum(ratio)
    val = n * ratio[1] // tot
    test = n * ratio[2] // tot
    return n - val - test, val, test


def split_edges(graph: DiGraph, ratio=(16, 1, 3), seed: int = 0) -> LinkSplit:
    """Uniform random train/val/test edge partition; val/test take the floor of their share."""
    ratio = tuple(int(r) for r in ratio)
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ConfigError(f"split ratio entries must be positive, got {ratio}")
    if graph.num_edges < sum(ratio):
        raise ValueError(f"need at least {sum(ratio)} edges to split, graph has {graph.num_edges}")
    n_train, n_val, _ = _split_sizes(graph.num_edges, ratio)
    perm = np.random.default_rng(seed).permutation(graph.num_edges)
    pick = lambda idx: graph.edges[np.sort(idx)]  # noqa: E731
    return LinkSplit(pick(perm[:n_train]), pick(perm[n_train:n_train + n_val]),
                     pick(perm[n_train + n_val:]), graph, seed, ratio)


def split_nodes(graph: DiGraph, ratio=(3, 1, 1), seed: int = 0):
    """Label-stratified node partition into (train, val, test) id arrays.

    Global val/test sizes are the floor of their share; they are apportioned
    to classes by largest remainder so every class is represented in
    proportion.
    """
    if graph.labels is None:
        raise ConfigError("node split needs labels")
    ratio = tuple(int(r) for r in ratio)
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ConfigError(f"split ratio entries must be positive, got {ratio}")
    labels = graph.labels
    classes, counts = np.unique(labels, return_counts=True)
    small = classes[counts < sum(ratio)]
    if len(small):
        warnings.warn(f"classes {small.tolist()} have fewer than {sum(ratio)} nodes; split is best-effort")
    _, n_val, n_test = _split_sizes(len(labels), ratio)
    tot = sum(ratio)

    def apportion(total_count, share):
        exact = counts * share / tot
        base = np.floor(exact).astype(np.int64)
        rest = total_count - base.sum()
        order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - base[i]), i))
        for i in order[:max(rest, 0)]:
            base[i] += 1
        return base

    val_c = apportion(n_val, ratio[1])
    test_c = apportion(n_test, ratio[2])
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c, nv, nt in zip(classes, val_c, test_c):
        ids = rng.permutation(np.flatnonzero(labels == c))
        nv = min(nv, len(ids))
        nt = min(nt, len(ids) - nv)
        val.append(ids[:nv])
        test.append(ids[nv:nv + nt])
        train.append(ids[nv + nt:])
    return tuple(np.sort(np.concatenate(p)) for p in (train, val, test))


# ----------------------------------------------------------------- sampling

@dataclass
class SampleBatch:
    pairs: np.ndarray       # (k, 2) ordered node pairs
    labels: np.ndarray      # (k,) Relation codes
    ratio: tuple = (1, 1, 1, 1)

    def __len__(self):
        return len(self.labels)

    def counts(self) -> dict:
        return {r.name: int((self.labels == r).sum()) for r in Relation}

    def subset(self, idx) -> "SampleBatch":
        return SampleBatch(self.pairs[idx], self.labels[idx], self.ratio)


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_non_edges(graph: DiGraph, k: int, rng, exclude=None) -> np.ndarray:
    """Uniform ordered pairs u != v with no edge either way in ``graph``."""
    rng = _as_rng(rng)
    n = graph.num_nodes
    if k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if n < 2:
        raise ValueError("need at least two nodes to sample non-edges")
    out = np.zeros((0, 2), dtype=np.int64)
    rejected = 0
    while len(out) < k:
        m = max(2 * (k - len(out)), 16)
        cand = rng.integers(0, n, size=(m, 2))
        ok = cand[:, 0] != cand[:, 1]
        ok &= ~graph.has_edges(cand[:, 0], cand[:, 1])
        ok &= ~graph.has_edges(cand[:, 1], cand[:, 0])
        if exclude is not None:
            ok &= ~exclude.has_edges(cand[:, 0], cand[:, 1]) & ~exclude.has_edges(cand[:, 1], cand[:, 0])
        rejected += int((~ok).sum())
        if rejected > MAX_REJECTIONS:
            raise RuntimeError("graph too dense for non-edge rejection sampling")
        out = np.concatenate([out, cand[ok]])
    return out[:k]


def classify_edges(edges: np.ndarray, graph: DiGraph) -> tuple[np.ndarray, np.ndarray]:
    """Split ``edges`` into those unidirectional in ``graph`` and bidirectional pairs (u < v)."""
    if not len(edges):
        empty = np.zeros((0, 2), dtype=np.int64)
        return empty, empty
    back = graph.has_edges(edges[:, 1], edges[:, 0])
    uni = edges[~back]
    bi = edges[back]
    bi = np.unique(np.sort(bi, axis=1), axis=0)
    return uni, bi


def sample_batch(split: LinkSplit, x: float = 1.0, seed=0) -> SampleBatch:
    """Four-relation training batch at ratio forward:reverse:no-edge:bidirectional = 1:1:1:x.

    Relations are read off the train graph; no-edge pairs are non-adjacent in
    the full graph so held-out edges never become negatives.
    """
    if not 0.0 <= x <= 1.0:
        raise ConfigError(f"bidirectional ratio x must lie in [0, 1], got {x}")
    rng = _as_rng(seed)
    uni, bi = classify_edges(split.train_edges, split.train_graph)
    n = len(uni)
    n_bi = min(int(np.floor(x * n)), len(bi))
    if n_bi < len(bi):
        bi = bi[np.sort(rng.choice(len(bi), size=n_bi, replace=False))]
    neg = sample_non_edges(split.graph, n, rng)
    pairs = np.concatenate([uni, uni[:, ::-1], bi, neg]).astype(np.int64)
    labels = np.repeat([Relation.FORWARD, Relation.REVERSE, Relation.BIDIRECTIONAL, Relation.NO_EDGE],
                       [n, n, len(bi), n]).astype(np.int64)
    return SampleBatch(pairs, labels, (1, 1, 1, x))


def heldout_batch(edges: np.ndarray, graph: DiGraph, seed=0) -> SampleBatch:
    """Labelled pairs for held-out edges: relations judged against the full graph."""
    rng = _as_rng(seed)
    uni, bi = classify_edges(edges, graph)
    neg = sample_non_edges(graph, len(uni), rng)
    pairs = np.concatenate([uni, uni[:, ::-1], bi, neg]).astype(np.int64)
    labels = np.repeat([Relation.FORWARD, Relation.REVERSE, Relation.BIDIRECTIONAL, Relation.NO_EDGE],
                       [len(uni), len(uni), len(bi), len(uni)]).astype(np.int64)
    return SampleBatch(pairs, labels)
