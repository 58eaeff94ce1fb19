"""Dual amplitude/phase graph encoder and the supervised task heads.

Neighbour aggregation never materialises a dense adjacency: each layer
gathers projected rows per (node, neighbour) entry, applies per-entry
attention weights and signs, and segment-sums back onto the node.
"""
from __future__ import annotations

import weakref
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import ConfigError, DiGraph

Params = Dict[str, Tensor]

BACKBONES = ("gat", "gcn")
FUSIONS = ("none", "early", "mid", "late", "all", "ews")
PHASE_NORMS = ("union", "split")


@dataclass
class EncoderConfig:
    layers: int = 3
    dim: int = 128
    in_dim: Optional[int] = None
    backbone: str = "gat"
    fusion: str = "mid"
    dropout: float = 0.5
    slope: float = 0.2
    phase_norm: str = "union"

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("encoder needs at least one layer")
        if self.dim < 1:
            raise ConfigError("embedding dimension must be positive")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.phase_norm not in PHASE_NORMS:
            raise ConfigError(f"phase_norm must be one of {PHASE_NORMS}, got {self.phase_norm!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def input_dim(self) -> int:
        return self.in_dim if self.in_dim is not None else self.dim

    def dims(self) -> list[tuple[int, int]]:
        return [(self.input_dim if l == 0 else self.dim, self.dim) for l in range(self.layers)]

    def fusion_layers(self) -> set[int]:
        """0-based indices of layers that exchange amplitude/phase information."""
        L = self.layers
        return {
            "none": set(),
            "early": {0},
            "mid": {(L + 1) // 2 - 1},
            "late": {L - 1},
            "all": set(range(L)),
            "ews": set(range(L)),
        }[self.fusion]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ComplexEmbedding:
    """Polar form of per-node complex vectors: ``x_u = a_u * exp(i*pi/2*theta_u)``."""

    amplitude: Tensor
    phase: Tensor

    def __post_init__(self):
        self.amplitude = ad.as_tensor(self.amplitude)
        self.phase = ad.as_tensor(self.phase)
        if self.amplitude.shape != self.phase.shape:
            raise ValueError(f"amplitude {self.amplitude.shape} and phase {self.phase.shape} differ in shape")

    @property
    def num_nodes(self) -> int:
        return self.amplitude.shape[0]

    @property
    def dim(self) -> int:
        return self.amplitude.shape[1]

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.amplitude.data, self.phase.data

    def complex(self) -> np.ndarray:
        return self.amplitude.data * np.exp(0.5j * np.pi * self.phase.data)

    def detach(self) -> "ComplexEmbedding":
        return ComplexEmbedding(self.amplitude.detach(), self.phase.detach())


def init_embeddings(graph: DiGraph, d: int, mode: str = "random", seed=0) -> ComplexEmbedding:
    """Encoder inputs: i.i.d. standard normal (``random``) or node attributes (``features``)."""
    if mode == "features":
        if graph.features is None:
            raise ConfigError("features mode needs node features on the graph")
        x = graph.features
        return ComplexEmbedding(Tensor(x.copy()), Tensor(x.copy()))
    if mode not in ("random", "random-normal"):
        raise ConfigError(f"unknown init mode {mode!r}")
    if d < 1:
        raise ConfigError("embedding dimension must be positive")
    rng = np.random.default_rng(seed)
    return ComplexEmbedding(Tensor(rng.standard_normal((graph.num_nodes, d))),
                            Tensor(rng.standard_normal((graph.num_nodes, d))))


# ------------------------------------------------------------ neighbourhoods

class Neighborhood:
    """Per-node aggregation entries for a graph.

    ``dst``/``src`` enumerate, for each node u (sorted), the set
    ``{u} | in(u) | out(u)``; ``sign`` is +1 for self or in-neighbours, -1 for
    out-neighbours and 0 for neighbours linked both ways.
    """

    def __init__(self, graph: DiGraph):
        n = graph.num_nodes
        e = graph.edges
        self_ids = np.arange(n, dtype=np.int64)
        # (owner, neighbour, sign) triples before merging duplicates
        owner = np.concatenate([self_ids, e[:, 1], e[:, 0]])
        other = np.concatenate([self_ids, e[:, 0], e[:, 1]])
        sign = np.concatenate([np.ones(n), np.ones(len(e)), -np.ones(len(e))])
        key = owner * max(n, 1) + other
        uniq, inv = np.unique(key, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inv, sign)
        self.n = n
        self.dst = uniq // max(n, 1)
        self.src = uniq % max(n, 1)
        self.sign = merged.reshape(-1, 1)

        # per-sum sets for the split-normalisation variant
        in_owner = np.concatenate([self_ids, e[:, 1]])
        in_other = np.concatenate([self_ids, e[:, 0]])
        o = np.lexsort((in_other, in_owner))
        self.in_dst, self.in_src = in_owner[o], in_other[o]
        o = np.lexsort((e[:, 1], e[:, 0]))
        self.out_dst, self.out_src = e[o, 0], e[o, 1]


_NB_CACHE: "weakref.WeakKeyDictionary[DiGraph, Neighborhood]" = weakref.WeakKeyDictionary()


def neighborhood(graph: DiGraph) -> Neighborhood:
    nb = _NB_CACHE.get(graph)
    if nb is None:
        nb = _NB_CACHE[graph] = Neighborhood(graph)
    return nb


def _check(h: Tensor, W: Tensor, b: Tensor | None, where: str):
    if h.shape[1] != W.shape[0]:
        raise ad.ShapeError(f"{where}: input dim {h.shape[1]} does not match transform {W.shape}")
    if b is not None and b.shape != (2 * W.shape[1], 1):
        raise ad.ShapeError(f"{where}: attention vector {b.shape}, expected {(2 * W.shape[1], 1)}")


def attention(proj: Tensor, dst, src, b: Tensor, n: int, slope: float) -> Tensor:
    """Attention weights of every (dst, src) entry, softmax-normalised per dst.

    ``b^T [p_dst || p_src]`` is computed as ``p_dst . b_top + p_src . b_bottom``.
    """
    d = proj.shape[1]
    top = ad.row_gather(b, np.arange(d))
    bottom = ad.row_gather(b, np.arange(d, 2 * d))
    logits = ad.row_gather(proj @ top, dst) + ad.row_gather(proj @ bottom, src)
    return ad.segment_softmax(ad.leaky_relu(logits, slope), dst, n)


def _weighted_sum(proj: Tensor, dst, src, weight, n: int) -> Tensor:
    if weight is None:
        weight = Tensor(np.ones((len(dst), 1)))
    return ad.spmm(weight, proj, dst, src, n)


def undirected_aggregate(h: Tensor, graph: DiGraph, W: Tensor, b: Tensor | None,
                         slope: float = 0.2, backbone: str = "gat") -> Tensor:
    """Pre-activation of the direction-agnostic aggregator over ``{u} | in(u) | out(u)``."""
    _check(h, W, b, "undirected_aggregate")
    nb = neighborhood(graph)
    proj = h @ W
    if backbone == "gcn":
        return _weighted_sum(proj, nb.dst, nb.src, None, nb.n)
    alpha = attention(proj, nb.dst, nb.src, b, nb.n, slope)
    return _weighted_sum(proj, nb.dst, nb.src, alpha, nb.n)


def directed_aggregate(h: Tensor, graph: DiGraph, W: Tensor, b: Tensor | None,
                       slope: float = 0.2, backbone: str = "gat", phase_norm: str = "union") -> Tensor:
    """Pre-activation of the signed aggregator: self and in-neighbours add, out-neighbours subtract."""
    _check(h, W, b, "directed_aggregate")
    nb = neighborhood(graph)
    proj = h @ W
    sign = Tensor(nb.sign)
    if backbone == "gcn":
        return _weighted_sum(proj, nb.dst, nb.src, sign, nb.n)
    if phase_norm == "union":
        alpha = attention(proj, nb.dst, nb.src, b, nb.n, slope)
        return _weighted_sum(proj, nb.dst, nb.src, alpha * sign, nb.n)
    a_in = attention(proj, nb.in_dst, nb.in_src, b, nb.n, slope)
    pos = _weighted_sum(proj, nb.in_dst, nb.in_src, a_in, nb.n)
    if not len(nb.out_dst):
        return pos
    a_out = attention(proj, nb.out_dst, nb.out_src, b, nb.n, slope)
    return pos - _weighted_sum(proj, nb.out_dst, nb.out_src, a_out, nb.n)


def amplitude_layer(a_in: Tensor, graph: DiGraph, W: Tensor, b: Tensor | None = None,
                    slope: float = 0.2, backbone: str = "gat") -> Tensor:
    return ad.relu(undirected_aggregate(a_in, graph, W, b, slope, backbone))


def phase_layer(theta_in: Tensor, graph: DiGraph, W: Tensor, b: Tensor | None = None,
                slope: float = 0.2, backbone: str = "gat", phase_norm: str = "union") -> Tensor:
    return ad.relu(directed_aggregate(theta_in, graph, W, b, slope, backbone, phase_norm))


def gcn_layer(x_in: Tensor, graph: DiGraph, W: Tensor, signed: bool = False) -> Tensor:
    """Attention-free layer: plain (optionally in-minus-out signed) neighbour sums."""
    if signed:
        return phase_layer(x_in, graph, W, None, backbone="gcn")
    return amplitude_layer(x_in, graph, W, None, backbone="gcn")


def fusion_step(a_in: Tensor, theta_in: Tensor, graph: DiGraph, params: Params, layer: int,
                config: EncoderConfig) -> tuple[Tensor, Tensor]:
    """Fusion layer update.

    Graph fusion: ``a' = relu(agg(a) + agg(theta))`` and
    ``theta' = relu(dagg(theta) + dagg(a))`` with separate parameters for each
    of the four aggregations. With ``config.fusion == "ews"`` the inputs are
    already-aggregated pre-activations and are combined per node:
    ``a' = relu(a + theta @ psi_a)``, ``theta' = relu(theta + a @ psi_t)``.
    """
    p = f"L{layer}."
    if config.fusion == "ews":
        try:
            psi_a, psi_t = params[p + "amp.psi"], params[p + "pha.psi"]
        except KeyError:
            raise ConfigError(f"layer {layer}: element-wise-sum fusion parameters missing") from None
        return ad.relu(a_in + theta_in @ psi_a), ad.relu(theta_in + a_in @ psi_t)
    s, bb = config.slope, config.backbone
    needed = ("amp.xW", "pha.xW") + (("amp.xb", "pha.xb") if bb == "gat" else ())
    missing = [p + k for k in needed if p + k not in params]
    if missing:
        raise ConfigError(f"layer {layer}: fusion parameters missing: {missing}")
    W_ax, W_tx = params[p + "amp.xW"], params[p + "pha.xW"]
    b_ax, b_tx = params.get(p + "amp.xb"), params.get(p + "pha.xb")
    a_out = ad.relu(undirected_aggregate(a_in, graph, params[p + "amp.W"], params.get(p + "amp.b"), s, bb)
                    + undirected_aggregate(theta_in, graph, W_ax, b_ax, s, bb))
    t_out = ad.relu(directed_aggregate(theta_in, graph, params[p + "pha.W"], params.get(p + "pha.b"), s, bb,
                                       config.phase_norm)
                    + directed_aggregate(a_in, graph, W_tx, b_tx, s, bb, config.phase_norm))
    return a_out, t_out


# ---------------------------------------------------------------- parameters

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_params(config: EncoderConfig, seed=0) -> Params:
    rng = np.random.default_rng(seed)
    fused = config.fusion_layers()
    params: Params = {}

    def put(name, arr):
        params[name] = Tensor(arr, requires_grad=True)

    for l, (din, dout) in enumerate(config.dims()):
        for stream in ("amp", "pha"):
            put(f"L{l}.{stream}.W", glorot(rng, din, dout))
            if config.backbone == "gat":
                put(f"L{l}.{stream}.b", glorot(rng, 2 * dout, 1))
        if l in fused and config.fusion == "ews":
            for stream in ("amp", "pha"):
                put(f"L{l}.{stream}.psi", glorot(rng, dout, dout))
        elif l in fused:
            for stream in ("amp", "pha"):
                put(f"L{l}.{stream}.xW", glorot(rng, din, dout))
                if config.backbone == "gat":
                    put(f"L{l}.{stream}.xb", glorot(rng, 2 * dout, 1))
    return params


def count_params(params: Params) -> int:
    return int(sum(p.data.size for p in params.values()))


def encode(graph: DiGraph, init: ComplexEmbedding, config: EncoderConfig, params: Params,
           training: bool = False, rng=None) -> ComplexEmbedding:
    a, t = init.amplitude, init.phase
    if a.shape[1] != config.input_dim:
        raise ad.ShapeError(f"encoder expects input dim {config.input_dim}, got {a.shape[1]}")
    fused = config.fusion_layers()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    s, bb = config.slope, config.backbone
    for l in range(config.layers):
        p = f"L{l}."
        if l in fused and config.fusion != "ews":
            a, t = fusion_step(a, t, graph, params, l, config)
        else:
            a_pre = undirected_aggregate(a, graph, params[p + "amp.W"], params.get(p + "amp.b"), s, bb)
            t_pre = directed_aggregate(t, graph, params[p + "pha.W"], params.get(p + "pha.b"), s, bb,
                                       config.phase_norm)
            if l in fused:
                a, t = fusion_step(a_pre, t_pre, graph, params, l, config)
            else:
                a, t = ad.relu(a_pre), ad.relu(t_pre)
        if training and config.dropout > 0 and l < config.layers - 1:
            a = ad.dropout(a, config.dropout, True, rng)
            t = ad.dropout(t, config.dropout, True, rng)
    return ComplexEmbedding(a, t)


# --------------------------------------------------------------------- heads

def init_edge_head(d: int, seed=0) -> Params:
    rng = np.random.default_rng(seed)
    return {"edge.W": Tensor(glorot(rng, 4 * d, 4), requires_grad=True),
            "edge.b": Tensor(np.zeros((1, 4)), requires_grad=True)}


def init_node_head(d: int, num_classes: int, seed=0) -> Params:
    rng = np.random.default_rng(seed)
    return {"node.W": Tensor(glorot(rng, 2 * d, num_classes), requires_grad=True),
            "node.b": Tensor(np.zeros((1, num_classes)), requires_grad=True)}


def head_edge_classifier(emb: ComplexEmbedding, pairs, head: Params) -> Tensor:
    """Four-way logits from ``[a_u; theta_u; a_v; theta_v]`` through a linear map."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    W, b = head["edge.W"], head["edge.b"]
    if W.shape[0] != 4 * emb.dim:
        raise ad.ShapeError(f"edge head expects input dim {W.shape[0]}, embeddings give {4 * emb.dim}")
    u, v = pairs[:, 0], pairs[:, 1]
    x = ad.concat_cols([ad.row_gather(emb.amplitude, u), ad.row_gather(emb.phase, u),
                        ad.row_gather(emb.amplitude, v), ad.row_gather(emb.phase, v)])
    return x @ W + b


def head_node_classifier(emb: ComplexEmbedding, head: Params, nodes=None) -> Tensor:
    W, b = head["node.W"], head["node.b"]
    if W.shape[0] != 2 * emb.dim:
        raise ad.ShapeError(f"node head expects input dim {W.shape[0]}, embeddings give {2 * emb.dim}")
    a, t = emb.amplitude, emb.phase
    if nodes is not None:
        a, t = ad.row_gather(a, nodes), ad.row_gather(t, nodes)
    return ad.concat_cols([a, t]) @ W + b
