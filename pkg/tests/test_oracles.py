import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duplex import autodiff as ad
from duplex.autodiff import Tensor
from duplex.encoder import ComplexEmbedding
from duplex.graph import Relation, SampleBatch
from duplex.objective import connection_loss
from duplex.oracles import (GRADCHECKS, SvdError, auc_bruteforce, fd_gradient, lemma2_check, near_kink,
                            random_lemma2_digraph, run_gradcheck, truncated_svd_small)

LEMMA_A = [[0, 1, 1], [0, 0, 1], [0, 0, 0]]


def test_fd_quadratic():
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    rep = fd_gradient(lambda: ad.total(x * x), {"x": x})
    assert rep.max_rel_error < 1e-9
    ad.total(x * x).backward()
    np.testing.assert_array_equal(x.grad, [[2.0, 4.0]])


@pytest.mark.parametrize("f,dfdx", [
    (lambda x: ad.total(ad.sin(x)), np.cos),
    (lambda x: ad.total(ad.exp(ad.scalar_mul(x, 0.5))), lambda v: 0.5 * np.exp(0.5 * v)),
    (lambda x: ad.total(x * x * x), lambda v: 3 * v * v),
])
def test_fd_self_validation(f, dfdx):
    # central differences against closed forms, independent of the tape
    v = np.array([[-0.7, 0.3, 1.9]])
    x = Tensor(v.copy(), requires_grad=True)
    eps = 1e-5
    fd = np.array([(f(Tensor(v + eps * e)).item() - f(Tensor(v - eps * e)).item()) / (2 * eps)
                   for e in np.eye(3)[:, None, :]])
    np.testing.assert_allclose(fd, dfdx(v[0]), rtol=1e-9)
    assert fd_gradient(lambda: f(x), {"x": x}).max_rel_error < 1e-8


def test_fd_detects_wrong_gradient():
    x = Tensor(np.array([[0.5, 1.5]]), requires_grad=True)

    def bad():
        out = ad.sin(x)
        return ad.total(ad._make(out.data, [x], "sin", lambda g: [g * 2.0]))

    rep = fd_gradient(bad, {"x": x})
    assert not rep.ok(1e-4) and rep.per_param["x"][0] > 0.1


def test_fd_skips_kink_crossings():
    x = Tensor(np.array([[3e-6, 1.0]]), requires_grad=True)
    rep = fd_gradient(lambda: ad.total(ad.abs(x)), {"x": x})
    assert rep.skipped == 1 and rep.checked == 1 and rep.max_rel_error < 1e-9
    assert near_kink(ad.total(ad.abs(Tensor(np.array([[1e-7]])))))
    assert not near_kink(ad.total(ad.abs(Tensor(np.array([[1e-3]])))))


def test_connection_loss_phase_fd_zero():
    rng = np.random.default_rng(0)
    a = Tensor(rng.uniform(0.2, 1, (4, 3)), requires_grad=True)
    t = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    batch = SampleBatch(np.array([[0, 1], [2, 3], [1, 3]]),
                        np.array([Relation.FORWARD, Relation.NO_EDGE, Relation.BIDIRECTIONAL]))
    f = lambda: connection_loss(ComplexEmbedding(a, t), batch)  # noqa: E731
    eps = 1e-5
    for i in range(t.data.size):
        flat = t.data.reshape(-1)
        old = flat[i]
        flat[i] = old + eps
        hi = f().item()
        flat[i] = old - eps
        lo = f().item()
        flat[i] = old
        assert abs(hi - lo) / (2 * eps) <= 1e-10


def test_registry_all_pass():
    reports = run_gradcheck()
    assert set(reports) == set(GRADCHECKS)
    bad = {k: r.max_rel_error for k, r in reports.items() if not r.ok(1e-4)}
    assert not bad
    json.dumps({k: r.to_dict() for k, r in reports.items()})


def test_registry_unknown_name():
    with pytest.raises(KeyError, match="nope"):
        run_gradcheck(["relu", "nope"])


def test_direction_loss_full_graph_fd():
    rep = run_gradcheck(["direction_loss_l1", "total_loss"])
    assert all(r.ok(1e-4) for r in rep.values())


def test_auc_bruteforce_examples():
    assert auc_bruteforce([1, 0], [1, 0]) == 1.0
    assert auc_bruteforce([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        auc_bruteforce([1, 2], [0, 0])


def _check_svd(M, d, U, s, V):
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    assert np.abs(U.T @ U - np.eye(d)).max() <= 1e-10
    assert np.abs(V.T @ V - np.eye(d)).max() <= 1e-10


def test_svd_identity():
    U, s, V = truncated_svd_small(np.eye(4), 4)
    np.testing.assert_array_equal(s, np.ones(4))
    np.testing.assert_allclose(U @ np.diag(s) @ V.T, np.eye(4), atol=1e-15)


def test_svd_rank_one():
    rng = np.random.default_rng(1)
    M = np.outer(rng.standard_normal(6), rng.standard_normal(5))
    U, s, V = truncated_svd_small(M, 1)
    assert np.linalg.norm(M - (U * s) @ V.T) <= 1e-10


def test_svd_random_full_rank():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((8, 8))
    U, s, V = truncated_svd_small(M, 8)
    assert np.linalg.norm(M - (U * s) @ V.T) <= 1e-8
    _check_svd(M, 8, U, s, V)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1), st.booleans())
def test_svd_properties(m, n, seed, low_rank):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m, n))
    if low_rank and min(m, n) > 1:
        M = rng.standard_normal((m, 1)) @ rng.standard_normal((1, n))
    d = min(m, n)
    U, s, V = truncated_svd_small(M, d)
    _check_svd(M, d, U, s, V)
    assert np.linalg.norm(M - (U * s) @ V.T) <= 1e-8
    k = max(1, d - 1)
    Uk, sk, Vk = truncated_svd_small(M, k)
    # Eckart-Young: the rank-k residual is the tail of the spectrum
    np.testing.assert_allclose(np.linalg.norm(M - (Uk * sk) @ Vk.T), np.sqrt(np.sum(s[k:] ** 2)), atol=1e-8)


def test_svd_limits():
    with pytest.raises(ValueError):
        truncated_svd_small(np.zeros((65, 2)), 1)
    with pytest.raises(ValueError):
        truncated_svd_small(np.eye(3), 4)
    with pytest.raises(SvdError):
        truncated_svd_small(np.random.default_rng(0).standard_normal((10, 10)), 3, max_sweeps=1)


def test_lemma2_worked_example():
    rep = lemma2_check(LEMMA_A, 2)
    assert not rep.skipped and rep.holds
    assert rep.zero_rows == [2] and rep.max_zero_row_norm <= 1e-10
    # transpose: node 0 has no in-edges, so its target embedding vanishes
    assert rep.zero_cols == [0] and rep.max_zero_col_norm <= 1e-10
    assert rep.ham_rows_nonzero


def test_lemma2_transpose_symmetry():
    At = np.array(LEMMA_A, dtype=float).T
    rep = lemma2_check(At, 2)
    assert rep.holds and rep.zero_rows == [0] and rep.zero_cols == [2]


def test_lemma2_random_digraphs():
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(20):
        rep = lemma2_check(random_lemma2_digraph(int(rng.integers(5, 12)), rng), 2)
        if rep.skipped:
            continue
        assert rep.holds, rep
        checked += 1
    assert checked >= 5


def test_lemma2_degenerate_skips_and_errors():
    perm = np.array([[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
    rep = lemma2_check(perm, 2)            # singular values 1, 1 tie
    assert rep.skipped and "degenerate" in rep.notice
    with pytest.raises(ValueError):
        lemma2_check(np.ones((3, 3)) - np.eye(3), 1)
