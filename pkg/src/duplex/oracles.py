"""Independent reference computations used to check the main code paths.

Nothing here is on a training path: finite-difference gradients, an O(n^2)
AUC, a plain-Python decoder, and a one-sided Jacobi SVD for small matrices.
"""
from __future__ import annotations

import cmath
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import PROTOTYPES, DiGraph, Relation

KINK_OPS = ("relu", "leaky_relu", "abs")
KINK_BAND = 1e-6


# ------------------------------------------------------- finite differences

@dataclass
class FdReport:
    eps: float
    max_rel_error: float = 0.0
    per_param: dict = field(default_factory=dict)   # name -> (max rel error, flat index)
    checked: int = 0
    skipped: int = 0

    def ok(self, tol: float = 1e-4) -> bool:
        return self.checked > 0 and self.max_rel_error <= tol

    def to_dict(self) -> dict:
        return {"eps": self.eps, "max_rel_error": self.max_rel_error, "checked": self.checked,
                "skipped": self.skipped, "per_param": {k: list(v) for k, v in self.per_param.items()}}


def _kink_signature(t: Tensor) -> tuple:
    """Which side of zero every abs/relu input sits on; a change means a kink was crossed."""
    seen, stack, sig = set(), [t], []
    while stack:
        x = stack.pop()
        if id(x) in seen:
            continue
        seen.add(id(x))
        if x.op in KINK_OPS:
            sig.append((x._id, (x._parents[0].data > 0).tobytes()))
        stack.extend(x._parents)
    # node ids differ between evaluations; keep creation order only
    return tuple(s for _, s in sorted(sig))


def near_kink(t: Tensor, band: float = KINK_BAND) -> bool:
    seen, stack = set(), [t]
    while stack:
        x = stack.pop()
        if id(x) in seen:
            continue
        seen.add(id(x))
        if x.op in KINK_OPS and np.any(np.abs(x._parents[0].data) < band):
            return True
        stack.extend(x._parents)
    return False


def fd_gradient(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5,
                max_coords: int | None = None, floor: float = 1e-3, seed: int = 0) -> FdReport:
    """Compare tape gradients of ``f()`` with central differences.

    ``f`` rebuilds the scalar loss from the leaf tensors in ``params``; each
    leaf is perturbed in place. Coordinates whose +/-eps probes land on
    different sides of an abs/relu kink are skipped. The relative error
    divides by ``max(|g_tape|, |g_fd|, floor)``.
    """
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    out = f()
    base_sig = _kink_signature(out)
    out.backward()
    tape = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rep = FdReport(eps)
    rng = np.random.default_rng(seed)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
        worst, where = 0.0, -1
        for i in idx:
            old = flat[i]
            # signatures are read before the next in-place perturbation
            flat[i] = old + eps
            hi = f()
            hi_sig = _kink_signature(hi)
            flat[i] = old - eps
            lo = f()
            lo_sig = _kink_signature(lo)
            flat[i] = old
            if hi_sig != base_sig or lo_sig != base_sig:
                rep.skipped += 1
                continue
            g_fd = (hi.item() - lo.item()) / (2 * eps)
            g_tp = tape[name].reshape(-1)[i]
            err = abs(g_fd - g_tp) / max(abs(g_fd), abs(g_tp), floor)
            rep.checked += 1
            if err > worst or where < 0:
                worst, where = err, int(i)
        rep.per_param[name] = (worst, where)
        rep.max_rel_error = max(rep.max_rel_error, worst)
    for p in params.values():
        p.grad = None
    return rep


# -------------------------------------------------------------------- AUC

def auc_bruteforce(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if not len(pos) or not len(neg):
        raise ValueError("AUC needs both classes")
    wins = 0.0
    for s in pos:
        wins += float(np.sum(s > neg)) + 0.5 * float(np.sum(s == neg))
    return wins / (len(pos) * len(neg))


# ---------------------------------------------------------- decoder oracle

def direction_probs_reference(z: complex, distance: str = "l1", restrict=tuple(Relation)) -> list[float]:
    """Decoder probabilities for one complex score in plain Python floats."""
    def dist(r):
        d = z - PROTOTYPES[Relation(r)]
        return abs(d.real) + abs(d.imag) if distance == "l1" else abs(d)

    w = [math.exp(-dist(r)) for r in restrict]
    s = math.fsum(w)
    return [x / s for x in w]


def hermitian_score_reference(a_u, t_u, a_v, t_v) -> complex:
    return sum(x * y * cmath.exp(0.5j * math.pi * (p - q)) for x, p, y, q in zip(a_u, t_u, a_v, t_v))


# -------------------------------------------------------------------- SVD

class SvdError(RuntimeError):
    pass


def _complete_basis(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns not flagged ``good`` with orthonormal vectors via Gram-Schmidt."""
    m = U.shape[0]
    basis = [U[:, j] for j in range(U.shape[1]) if good[j]]
    out = U.copy()
    candidates = iter(np.eye(m))
    for j in range(U.shape[1]):
        if good[j]:
            continue
        for e in candidates:
            w = e - sum(np.dot(b, e) * b for b in basis)
            w = w - sum(np.dot(b, w) * b for b in basis)
            nw = np.linalg.norm(w)
            if nw > 1e-8:
                out[:, j] = w / nw
                basis.append(out[:, j])
                break
        else:
            raise SvdError("could not complete the left singular basis")
    return out


def truncated_svd_small(M, d: int, tol: float = 1e-12, max_sweeps: int = 100):
    """Rank-``d`` SVD ``(U, s, V)`` of a matrix no larger than 64x64 by one-sided Jacobi rotations."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or max(M.shape) > 64:
        raise ValueError(f"expects a matrix no larger than 64x64, got {M.shape}")
    m, n = M.shape
    if not 1 <= d <= min(m, n):
        raise ValueError(f"rank {d} out of range for shape {M.shape}")
    if m < n:
        V, s, U = truncated_svd_small(M.T, d, tol, max_sweeps)
        return U, s, V
    A = M.copy()
    V = np.eye(n)
    # columns below this squared norm are numerically zero; rotating them never settles
    floor = (1e-15 * np.linalg.norm(M)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = A[:, i] @ A[:, i]
                beta = A[:, j] @ A[:, j]
                gamma = A[:, i] @ A[:, j]
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or abs(gamma) <= floor:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s_ = c * t
                ai, aj = A[:, i].copy(), A[:, j].copy()
                A[:, i], A[:, j] = c * ai - s_ * aj, s_ * ai + c * aj
                vi, vj = V[:, i].copy(), V[:, j].copy()
                V[:, i], V[:, j] = c * vi - s_ * vj, s_ * vi + c * vj
        if not rotated:
            break
    else:
        raise SvdError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
    sv = np.linalg.norm(A, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, A, V = sv[order], A[:, order], V[:, order]
    good = sv > max(sv[0], 1.0) * 1e-13 if n else sv > 0
    U = np.zeros((m, n))
    U[:, good] = A[:, good] / sv[good]
    if not good.all():
        U = _complete_basis(U, good)
        sv = np.where(good, sv, 0.0)
    return U[:, :d], sv[:d], V[:, :d]


# ---------------------------------------------------------- zero-row lemma

@dataclass
class Lemma2Report:
    zero_rows: list
    max_zero_row_norm: float | None
    zero_cols: list
    max_zero_col_norm: float | None
    ham_rows_nonzero: bool
    holds: bool
    skipped: bool = False
    notice: str = ""


def lemma2_check(A, d: int, tol: float = 1e-10) -> Lemma2Report:
    """Rank-``d`` SVD embeddings of a real adjacency give all-zero rows to nodes without out-edges.

    Source embedding ``U sqrt(S)``, target embedding ``V sqrt(S)``. The same
    nodes keep a nonzero row in the Hermitian adjacency whenever they have an
    in-edge.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    zero_rows = [int(i) for i in np.flatnonzero(~A.any(axis=1))]
    zero_cols = [int(i) for i in np.flatnonzero(~A.any(axis=0))]
    if not zero_rows:
        raise ValueError("adjacency has no all-zero row")
    U, s, V = truncated_svd_small(A, d)
    full = truncated_svd_small(A, min(A.shape))[1]
    top = full[: d + 1] if d < len(full) else full[:d]
    if np.any(full[:d] <= 1e-8) or np.any(np.abs(np.diff(top)) <= 1e-8):
        return Lemma2Report(zero_rows, None, zero_cols, None, False, False, True,
                            "degenerate spectrum: top singular values tie or vanish")
    root = np.sqrt(s)
    Xs, Xt = U * root, V * root
    row_norm = float(np.linalg.norm(Xs[zero_rows], axis=1).max())
    col_norm = float(np.linalg.norm(Xt[zero_cols], axis=1).max()) if zero_cols else None
    src, dst = np.nonzero(A)
    keep = src != dst
    H = DiGraph.from_edges(n, np.stack([src[keep], dst[keep]], axis=1)).dense_ham()
    with_in = [i for i in zero_rows if A[:, i].any()]
    ham_ok = all(np.abs(H[i]).max() > 0 for i in with_in)
    holds = row_norm <= tol and (col_norm is None or col_norm <= tol) and ham_ok
    return Lemma2Report(zero_rows, row_norm, zero_cols, col_norm, ham_ok, holds)


def random_lemma2_digraph(n: int, rng: np.random.Generator, p: float = 0.35) -> np.ndarray:
    """Random adjacency without self-loops and with at least one sink that has an in-edge."""
    while True:
        A = (rng.random((n, n)) < p).astype(np.float64)
        np.fill_diagonal(A, 0.0)
        sink = int(rng.integers(n))
        A[sink] = 0.0
        if A[:, sink].any() and A.any(axis=1).sum() >= 2:
            return A


# --------------------------------------------------------------- gradcheck

def _leaf(rng, shape, low=None, high=None, scale=1.0):
    if low is not None:
        data = rng.uniform(low, high, size=shape)
    else:
        data = rng.standard_normal(shape) * scale
    return Tensor(data, requires_grad=True)


def _unary_case(op, low=None, high=None):
    def build(rng):
        x = _leaf(rng, (3, 4), low, high)
        w = Tensor(rng.standard_normal((3, 4)))
        return (lambda: ad.total(op(x) * w)), {"x": x}
    return build


def _binary_case(op, shape_b=(3, 4), positive_b=False):
    def build(rng):
        a = _leaf(rng, (3, 4))
        b = _leaf(rng, shape_b, 0.5, 2.0) if positive_b else _leaf(rng, shape_b)
        w = Tensor(rng.standard_normal((3, 4)))
        return (lambda: ad.total(op(a, b) * w)), {"a": a, "b": b}
    return build


def _case_matmul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    w = Tensor(rng.standard_normal((3, 2)))
    return (lambda: ad.total(ad.matmul(a, b) * w)), {"a": a, "b": b}


def _case_reduce(op):
    def build(rng):
        x = _leaf(rng, (3, 4))
        w = Tensor(rng.standard_normal(op(x).shape))
        return (lambda: ad.total(op(x) * w)), {"x": x}
    return build


def _case_concat(rng):
    a, b = _leaf(rng, (3, 2)), _leaf(rng, (3, 3))
    w = Tensor(rng.standard_normal((3, 5)))
    return (lambda: ad.total(ad.concat_cols([a, b]) * w)), {"a": a, "b": b}


def _case_gather(rng):
    x = _leaf(rng, (4, 3))
    idx = np.array([0, 2, 2, 3, 0, 1])
    w = Tensor(rng.standard_normal((6, 3)))
    return (lambda: ad.total(ad.row_gather(x, idx) * w)), {"x": x}


def _case_segment_sum(rng):
    x = _leaf(rng, (6, 3))
    seg = np.array([0, 0, 1, 3, 3, 3])
    w = Tensor(rng.standard_normal((4, 3)))
    return (lambda: ad.total(ad.segment_sum(x, seg, 4) * w)), {"x": x}


def _case_segment_softmax(rng):
    x = _leaf(rng, (7, 1))
    seg = np.array([0, 0, 0, 1, 2, 2, 2])
    w = Tensor(rng.standard_normal((7, 1)))
    return (lambda: ad.total(ad.segment_softmax(x, seg, 3) * w)), {"x": x}


def _case_dropout(rng):
    x = _leaf(rng, (4, 5))
    w = Tensor(rng.standard_normal((4, 5)))
    return (lambda: ad.total(ad.dropout(x, 0.5, True, np.random.default_rng(7)) * w)), {"x": x}


def _toy_graph(rng, n=5) -> DiGraph:
    edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 2), (4, 1), (0, 3)]
    return DiGraph.from_edges(n, edges)


def _case_encoder(fusion: str, backbone: str = "gat", phase_norm: str = "union"):
    def build(rng):
        from .encoder import ComplexEmbedding, EncoderConfig, encode, init_params

        g = _toy_graph(rng)
        cfg = EncoderConfig(layers=2, dim=3, backbone=backbone, fusion=fusion, dropout=0.0,
                            phase_norm=phase_norm)
        params = init_params(cfg, int(rng.integers(1 << 30)))
        init = ComplexEmbedding(Tensor(rng.standard_normal((5, 3))), Tensor(rng.standard_normal((5, 3))))
        wa, wt = Tensor(rng.standard_normal((5, 3))), Tensor(rng.standard_normal((5, 3)))

        def f():
            e = encode(g, init, cfg, params)
            return ad.total(e.amplitude * wa) + ad.total(e.phase * wt)
        return f, params
    return build


def _emb_leaves(rng, n=5, d=4):
    from .encoder import ComplexEmbedding
    a = _leaf(rng, (n, d), 0.2, 1.0)
    t = _leaf(rng, (n, d), -1.0, 1.0)
    return ComplexEmbedding(a, t), {"a": a, "theta": t}


def _case_objective(which: str, distance: str = "l1"):
    def build(rng):
        from .graph import LinkSplit, sample_batch
        from .objective import LossSchedule, connection_loss, direction_loss, total_loss

        g = _toy_graph(rng)
        batch = sample_batch(LinkSplit.full(g), 1.0, 3)
        emb, leaves = _emb_leaves(rng)
        if which == "direction":
            return (lambda: direction_loss(emb, batch, distance)), leaves
        if which == "connection":
            return (lambda: connection_loss(emb, batch)), leaves
        sched = LossSchedule(0.3, 1e-2)
        return (lambda: total_loss(emb, batch, sched, 4, distance)[0]), leaves
    return build


def _case_edge_head(rng):
    from .encoder import head_edge_classifier, init_edge_head
    from .objective import supervised_ce_loss

    emb, leaves = _emb_leaves(rng, d=2)
    head = init_edge_head(2, 1)
    head["edge.b"].data[...] = rng.standard_normal((1, 4))
    pairs = np.array([[0, 1], [1, 0], [2, 3], [4, 0]])
    labels = np.array([0, 1, 2, 3])
    return (lambda: supervised_ce_loss(head_edge_classifier(emb, pairs, head), labels)), {**leaves, **head}


def _case_node_head(rng):
    from .encoder import head_node_classifier, init_node_head
    from .objective import supervised_ce_loss

    emb, leaves = _emb_leaves(rng, d=2)
    head = init_node_head(2, 3, 1)
    labels = np.array([0, 1, 2, 1, 0])
    return (lambda: supervised_ce_loss(head_node_classifier(emb, head), labels)), {**leaves, **head}


def _case_ce(rng):
    from .objective import supervised_ce_loss
    x = _leaf(rng, (3, 3))
    return (lambda: supervised_ce_loss(x, np.array([0, 2, 1]))), {"x": x}


GRADCHECKS: dict[str, Callable] = {
    "matmul": _case_matmul,
    "add": _binary_case(ad.add),
    "add_row": _binary_case(ad.add, (1, 4)),
    "add_col": _binary_case(ad.add, (3, 1)),
    "sub": _binary_case(ad.sub),
    "sub_scalar": _binary_case(ad.sub, (1, 1)),
    "hadamard": _binary_case(ad.hadamard),
    "hadamard_col": _binary_case(ad.hadamard, (3, 1)),
    "div": _binary_case(ad.div, positive_b=True),
    "scalar_mul": _unary_case(lambda x: ad.scalar_mul(x, -1.7)),
    "total": _case_reduce(ad.total),
    "mean": _case_reduce(ad.mean),
    "sum_cols": _case_reduce(ad.sum_cols),
    "concat_cols": _case_concat,
    "row_gather": _case_gather,
    "segment_sum": _case_segment_sum,
    "relu": _unary_case(ad.relu),
    "leaky_relu": _unary_case(ad.leaky_relu),
    "exp": _unary_case(ad.exp),
    "log": _unary_case(ad.log, 0.5, 3.0),
    "sqrt": _unary_case(ad.sqrt, 0.5, 3.0),
    "sigmoid": _unary_case(ad.sigmoid),
    "softplus": _unary_case(ad.softplus),
    "sin": _unary_case(ad.sin),
    "cos": _unary_case(ad.cos),
    "abs": _unary_case(ad.abs),
    "softmax_rows": _unary_case(ad.softmax_rows),
    "log_softmax_rows": _unary_case(ad.log_softmax_rows),
    "segment_softmax": _case_segment_softmax,
    "dropout": _case_dropout,
    "cross_entropy": _case_ce,
    "direction_loss_l1": _case_objective("direction", "l1"),
    "direction_loss_l2": _case_objective("direction", "l2"),
    "connection_loss": _case_objective("connection"),
    "total_loss": _case_objective("total"),
    "encoder_gat_none": _case_encoder("none"),
    "encoder_gat_mid": _case_encoder("mid"),
    "encoder_gat_all": _case_encoder("all"),
    "encoder_gat_ews": _case_encoder("ews"),
    "encoder_gat_split_norm": _case_encoder("mid", phase_norm="split"),
    "encoder_gcn_mid": _case_encoder("mid", "gcn"),
    "edge_head": _case_edge_head,
    "node_head": _case_node_head,
}


def run_gradcheck(names=None, registry: dict | None = None, seed: int = 0, eps: float = 1e-5,
                  tol: float = 1e-4) -> dict[str, FdReport]:
    """Run the named checks (all by default); unknown names raise ``KeyError``."""
    registry = GRADCHECKS if registry is None else registry
    names = list(registry) if names is None else list(names)
    unknown = [n for n in names if n not in registry]
    if unknown:
        raise KeyError(f"unknown gradcheck ops: {unknown}")
    out = {}
    for name in names:
        rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
        f, params = registry[name](rng)
        out[name] = fd_gradient(f, params, eps)
    return out
