import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from duplex import autodiff as ad
from duplex.autodiff import Adam, ShapeError, Tensor, adam_update
from duplex.oracles import fd_gradient


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


def test_relu_values():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 2.0])).data, [[0.0, 2.0]])


def test_segment_sum_values():
    x = Tensor([[1, 2], [3, 4], [5, 6]])
    np.testing.assert_array_equal(ad.segment_sum(x, [0, 0, 1], 2).data, [[4, 6], [5, 6]])


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_extremes_are_finite():
    out = ad.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[0.0, 1.0]])


def test_shape_mismatch_names_op():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_segment_sum_requires_sorted_ids():
    with pytest.raises(ValueError):
        ad.segment_sum(Tensor(np.ones((3, 1))), [1, 0, 1], 2)
    with pytest.raises(IndexError):
        ad.segment_sum(Tensor(np.ones((2, 1))), [0, 5], 2)


def test_dropout_rejects_bad_p():
    for p in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones((2, 2))), p, True, np.random.default_rng(0))


def test_dropout_scaling_and_identity():
    x = Tensor(np.ones((50, 40)))
    assert ad.dropout(x, 0.5, False).data is not None
    np.testing.assert_array_equal(ad.dropout(x, 0.5, False).data, x.data)
    out = ad.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    same = ad.dropout(x, 0.5, True, np.random.default_rng(0)).data
    np.testing.assert_array_equal(out, same)


def test_backward_linear_map():
    W = leaf(np.arange(6.0).reshape(2, 3))
    x = Tensor([[1.0], [2.0], [3.0]])
    ad.total(W @ x).backward()
    np.testing.assert_array_equal(W.grad, np.outer([1, 1], [1, 2, 3]))


def test_backward_dead_relu():
    c = leaf(2.0)
    (ad.relu(-c) * 3.0).backward()
    assert c.grad[0, 0] == 0.0


def test_abs_subgradient_zero():
    x = leaf([0.0, -2.0, 3.0])
    ad.total(ad.abs(x)).backward()
    np.testing.assert_array_equal(x.grad, [[0.0, -1.0, 1.0]])


def test_backward_rejects_non_scalar_and_repeat():
    x = leaf(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        (x * 2.0).backward()
    loss = ad.total(x)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_grad_accumulates_over_uses():
    x = leaf([[1.5, -2.0]])
    ad.total(x * x + x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_random_composite_graph_matches_fd(rng):
    A = leaf(rng.standard_normal((5, 5)))
    B = leaf(rng.standard_normal((5, 5)))
    w = Tensor(rng.standard_normal((5, 5)))

    def f():
        h = ad.sigmoid(A @ B) * ad.exp(ad.scalar_mul(A, 0.3))
        return ad.total(ad.softmax_rows(h + ad.sin(B)) * w) + ad.mean(ad.softplus(ad.cos(A) - B))

    assert fd_gradient(f, {"A": A, "B": B}).max_rel_error <= 1e-4


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    p = ad.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(ad.log_softmax_rows(Tensor(x)).data), p, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity_of_backward(r, c, alpha, beta, seed):
    g = np.random.default_rng(seed)
    x0 = g.standard_normal((r, c))
    w = Tensor(g.standard_normal((r, c)))

    def grad_of(builder):
        x = leaf(x0.copy())
        builder(x).backward()
        return x.grad

    f = lambda x: ad.total(ad.sin(x) * w)              # noqa: E731
    h = lambda x: ad.total(ad.hadamard(x, x))          # noqa: E731
    combo = grad_of(lambda x: ad.scalar_mul(f(x), alpha) + ad.scalar_mul(h(x), beta))
    np.testing.assert_allclose(combo, alpha * grad_of(f) + beta * grad_of(h), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31))
def test_segment_ops_match_dense(k, c, n, seed):
    g = np.random.default_rng(seed)
    ids = np.sort(g.integers(0, n, k))
    x = g.standard_normal((k, c))
    expected = np.zeros((n, c))
    for i, s in enumerate(ids):
        expected[s] += x[i]
    np.testing.assert_allclose(ad.segment_sum(Tensor(x), ids, n).data, expected, atol=1e-12)
    logits = g.standard_normal((k, 1))
    sm = ad.segment_softmax(Tensor(logits), ids, n).data[:, 0]
    for s in np.unique(ids):
        m = ids == s
        np.testing.assert_allclose(sm[m], np.exp(logits[m, 0]) / np.exp(logits[m, 0]).sum(), atol=1e-12)


def test_spmm_matches_gather_then_segment_sum(rng):
    dst = np.array([0, 0, 1, 2, 2, 2])
    src = np.array([1, 2, 0, 0, 1, 3])
    w, x = leaf(rng.standard_normal((6, 1))), leaf(rng.standard_normal((4, 3)))
    ref = ad.segment_sum(ad.row_gather(x, src) * w, dst, 3).data
    np.testing.assert_allclose(ad.spmm(w, x, dst, src, 3).data, ref, atol=1e-14)
    assert fd_gradient(lambda: ad.total(ad.spmm(w, x, dst, src, 3) * ad.spmm(w, x, dst, src, 3)),
                       {"w": w, "x": x}).max_rel_error <= 1e-4


def test_adam_zero_grad_is_fixed_point():
    p = leaf([[1.0, -2.0]])
    opt = Adam({"p": p}, lr=0.1)
    for _ in range(3):
        p.grad = np.zeros_like(p.data)
        opt.step()
    np.testing.assert_array_equal(p.data, [[1.0, -2.0]])


def test_adam_first_step_closed_form():
    p = np.array([0.0])
    m, v = np.zeros(1), np.zeros(1)
    adam_update(p, np.array([1.0]), m, v, 1, lr=1e-3)
    np.testing.assert_allclose(p, [-1e-3 / (1.0 + 1e-8)], rtol=0, atol=1e-18)


def test_adam_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        adam_update(np.zeros(1), np.ones(1), np.zeros(1), np.zeros(1), 0)


def test_adam_step_zeroes_grads_and_is_deterministic():
    def run():
        p = leaf([[0.5, 0.25]])
        opt = Adam({"p": p})
        for _ in range(5):
            ad.total(p * p * p).backward()
            opt.step()
            assert p.grad is None
        return p.data.copy()
    np.testing.assert_array_equal(run(), run())
