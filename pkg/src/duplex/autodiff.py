"""Dense 2-D tensors with reverse-mode differentiation.

Every tensor is a float64 matrix. Operations record a backward closure on the
output tensor; :meth:`Tensor.backward` replays those closures in exact reverse
creation order, so gradient accumulation order is fixed and reproducible.

Broadcasting is limited to row vectors ``(1, c)``, column vectors ``(r, 1)``
and scalars ``(1, 1)`` against a full ``(r, c)`` operand.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_counter = itertools.count()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "_done", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: Sequence["Tensor"] = (), op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_counter)
        self._done = False
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Fill ``.grad`` of every ``requires_grad`` tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._done:
            raise RuntimeError("backward() already ran on this graph; rebuild the forward pass")
        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in nodes:
                continue
            nodes[t._id] = t
            stack.extend(p for p in t._parents if p.requires_grad)
        order = sorted(nodes.values(), key=lambda t: t._id, reverse=True)
        for t in order:
            if t is not self and t._parents:
                t.grad = None
        self._accumulate(np.ones_like(self.data))
        for t in order:
            assert all(p._id < t._id for p in t._parents), "tape is not topologically ordered"
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)
        self._done = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], op: str, backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents, op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple[int, int]:
    shape = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            shape.append(x)
        elif x == 1:
            shape.append(y)
        else:
            raise ShapeError(f"{op}: incompatible shapes {a} and {b}")
    return tuple(shape)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------- linear ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), "scalar_mul", backward)


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("hadamard", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "hadamard", backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), "div", backward)


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    a = as_tensor(a)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.array([[a.data.sum()]]), (a,), "sum", backward)


def mean(a: Tensor) -> Tensor:
    return scalar_mul(total(a), 1.0 / as_tensor(a).data.size)


def sum_cols(a: Tensor) -> Tensor:
    """Row-wise sum: ``(r, c) -> (r, 1)``."""
    a = as_tensor(a)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=1, keepdims=True), (a,), "sum_cols", backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, "concat_cols", backward)


def row_gather(a: Tensor, index) -> Tensor:
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError("row_gather: index must be 1-D")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f"row_gather: index out of range for {a.shape[0]} rows")

    def backward(g):
        a._accumulate(scatter_rows(g, index, a.shape[0]))

    return _make(a.data[index], (a,), "row_gather", backward)


def segment_sum(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` sharing a segment id; ids must be sorted and in range."""
    a = as_tensor(a)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: {ids.shape[0] if ids.ndim else 0} ids for {a.shape[0]} rows")
    if ids.size:
        if ids.min() < 0 or ids.max() >= num_segments:
            raise IndexError("segment_sum: segment id out of range")
        if np.any(np.diff(ids) < 0):
            raise ValueError("segment_sum: segment ids must be sorted")
    out = scatter_rows(a.data, ids, num_segments)

    def backward(g):
        a._accumulate(g[ids])

    return _make(out, (a,), "segment_sum", backward)


def spmm(weight: Tensor, x: Tensor, dst, src, num_rows: int) -> Tensor:
    """``out[d] = sum_k weight[k] * x[src[k]]`` over entries with ``dst[k] == d``.

    Equivalent to ``segment_sum(row_gather(x, src) * weight, dst)`` without the
    ``(k, c)`` intermediate; evaluated as a CSR product.
    """
    weight, x = as_tensor(weight), as_tensor(x)
    dst = np.asarray(dst, dtype=np.int64)
    src = np.asarray(src, dtype=np.int64)
    if weight.shape != (len(dst), 1) or src.shape != dst.shape:
        raise ShapeError(f"spmm: weight {weight.shape} for {len(dst)} entries")
    if dst.size and (dst.min() < 0 or dst.max() >= num_rows or src.min() < 0 or src.max() >= x.shape[0]):
        raise IndexError("spmm: entry index out of range")
    mat = sp.csr_matrix((weight.data[:, 0], (dst, src)), shape=(num_rows, x.shape[0]))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.asarray(mat.T @ g))
        if weight.requires_grad:
            weight._accumulate(np.einsum("ij,ij->i", g[dst], x.data[src]).reshape(-1, 1))

    return _make(np.asarray(mat @ x.data), (weight, x), "spmm", backward)


def scatter_rows(rows: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Sum ``rows`` into ``n`` buckets by ``index`` (a one-nonzero-per-column sparse product)."""
    k = len(index)
    if not k:
        return np.zeros((n, rows.shape[1]))
    mat = sp.csc_matrix((np.ones(k), index, np.arange(k + 1)), shape=(n, k))
    return np.asarray(mat @ rows)


# ----------------------------------------------------------- elementwise ops

def _unary(a, fwd: np.ndarray, dfdx: Callable[[], np.ndarray], op: str) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g * dfdx())

    return _make(fwd, (a,), op, backward)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda: (a.data > 0).astype(np.float64), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.where(a.data > 0, a.data, slope * a.data),
                  lambda: np.where(a.data > 0, 1.0, slope), "leaky_relu")


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda: out, "exp")


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data, "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root with subgradient 0 at 0."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def d():
        safe = np.where(out > 0, out, 1.0)
        return np.where(out > 0, 0.5 / safe, 0.0)

    return _unary(a, out, d, "sqrt")


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _unary(a, out, lambda: out * (1.0 - out), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(a))``, overflow-safe."""
    a = as_tensor(a)
    return _unary(a, np.logaddexp(0.0, a.data), lambda: 0.5 * (1.0 + np.tanh(0.5 * a.data)), "softplus")


def sin(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.sin(a.data), lambda: np.cos(a.data), "sin")


def cos(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.cos(a.data), lambda: -np.sin(a.data), "cos")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name
    a = as_tensor(a)
    return _unary(a, np.abs(a.data), lambda: np.sign(a.data), "abs")


def softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return _make(out, (a,), "softmax_rows", backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)

    def backward(g):
        a._accumulate(g - p * g.sum(axis=1, keepdims=True))

    return _make(out, (a,), "log_softmax_rows", backward)


def segment_softmax(logits: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a column of logits within each segment.

    Composed from primitive ops; the per-segment max shift is a constant and
    does not change the value or the gradient.
    """
    logits = as_tensor(logits)
    ids = np.asarray(segment_ids, dtype=np.int64)
    shift = np.full((num_segments, logits.shape[1]), -np.inf)
    np.maximum.at(shift, ids, logits.data)
    shift[~np.isfinite(shift)] = 0.0
    e = exp(sub(logits, Tensor(shift[ids])))
    denom = segment_sum(e, ids, num_segments)
    return div(e, row_gather(denom, ids))


def dropout(a: Tensor, p: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: kept entries are scaled by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), "dropout", backward)


# ---------------------------------------------------------------- optimizer

def adam_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
                lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One in-place Adam update with bias correction."""
    if t <= 0:
        raise ValueError(f"Adam step index must be positive, got {t}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a dict of named leaf tensors; moment buffers are per parameter."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_update(p.data, g, self.m[k], self.v[k], self.t, self.lr, self.beta1, self.beta2, self.eps)
            p.grad = None

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
