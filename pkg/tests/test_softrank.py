import itertools

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xicorattn import autograd as ag
from xicorattn.autograd import Tensor
from xicorattn.errors import ContractError, ParameterError
from xicorattn.gradcheck import check_soft_rank
from xicorattn.rankstats import descending_ranks, xi_from_rank_sequence
from xicorattn.softrank import (
    block_average,
    exact_descending_ranks,
    isotonic_regression,
    pav_margin,
    soft_rank,
    soft_rank_backward,
    soft_rank_forward,
    soft_rank_vector,
)


def brute_force_isotonic(w):
    """Try every split of 0..n-1 into consecutive blocks; keep the best non-increasing one."""
    n = len(w)
    best, best_v = np.inf, None
    for cuts in itertools.product([False, True], repeat=n - 1):
        edges = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = [np.mean(w[a:b]) for a, b in zip(edges[:-1], edges[1:])]
        if any(m1 < m2 for m1, m2 in zip(means, means[1:])):
            continue
        v = np.concatenate([np.full(b - a, m) for a, b, m in zip(edges[:-1], edges[1:], means)])
        obj = np.sum((v - w) ** 2)
        if obj < best:
            best, best_v = obj, v
    return best_v


def permutahedron_projection(z):
    """argmin ||y - z||^2 over the permutahedron of (n, ..., 1), as an explicit QP."""
    n = len(z)
    rho = np.arange(n, 0, -1, dtype=float)
    y = cp.Variable(n)
    cons = [cp.sum(y) == rho.sum()]
    for size in range(1, n):
        cap = rho[:size].sum()
        for subset in itertools.combinations(range(n), size):
            cons.append(cp.sum(y[list(subset)]) <= cap)
    cp.Problem(cp.Minimize(cp.sum_squares(y - z)), cons).solve(solver=cp.CLARABEL, tol_gap_abs=1e-12,
                                                                tol_gap_rel=1e-12, tol_feas=1e-12)
    return y.value


def test_isotonic_examples():
    sol = isotonic_regression(np.array([3.0, 2.0, 1.0]))
    np.testing.assert_array_equal(sol.v, [3.0, 2.0, 1.0])
    assert sol.blocks == [(0, 1, 3.0), (1, 2, 2.0), (2, 3, 1.0)]
    sol = isotonic_regression(np.array([0.0, 1.0]))
    np.testing.assert_array_equal(sol.v, [0.5, 0.5])
    assert sol.blocks == [(0, 2, 0.5)]


def test_isotonic_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        w = rng.standard_normal(int(rng.integers(1, 9))) * rng.uniform(0.1, 5)
        np.testing.assert_allclose(isotonic_regression(w).v, brute_force_isotonic(w), atol=1e-8, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_isotonic_invariants(values):
    w = np.array(values)
    sol = isotonic_regression(w)
    assert np.all(np.diff(sol.v) <= 1e-12)
    edges = [b[0] for b in sol.blocks] + [sol.blocks[-1][1]]
    assert edges[0] == 0 and edges[-1] == w.size and all(a < b for a, b in zip(edges, edges[1:]))
    for a, b, m in sol.blocks:
        assert m == pytest.approx(w[a:b].mean(), abs=1e-9 * (1 + abs(m)))
        np.testing.assert_array_equal(sol.v[a:b], np.full(b - a, sol.v[a]))
    means = [m for _, _, m in sol.blocks]
    assert all(m1 > m2 for m1, m2 in zip(means, means[1:]))


def test_isotonic_rejects_nonfinite():
    with pytest.raises(ValueError):
        isotonic_regression(np.array([1.0, np.nan]))


def test_soft_rank_examples():
    np.testing.assert_allclose(soft_rank(np.array([3.0, 1.0, 2.0]), 1e-3).data, [1, 3, 2], atol=1e-6)
    for n in (1, 2, 5, 8):
        np.testing.assert_allclose(soft_rank(np.full(n, 0.7), 0.1).data, np.full(n, (n + 1) / 2), atol=1e-12)
    with pytest.raises(ParameterError):
        soft_rank(np.ones(3), 0.0)
    rv = soft_rank_vector(np.array([3.0, 1.0, 2.0]), 1e-3)
    assert rv.convention == "descending_soft" and rv.epsilon == 1e-3


@pytest.mark.parametrize("eps", [1e-2, 0.3, 1.0, 5.0])
def test_soft_rank_matches_permutahedron_qp(eps):
    rng = np.random.default_rng(int(eps * 1000))
    for _ in range(4):
        n = int(rng.integers(2, 7))
        k = rng.standard_normal(n)
        oracle = permutahedron_projection(-k / eps)
        np.testing.assert_allclose(soft_rank(k, eps).data, oracle, atol=1e-6, rtol=0)


def test_soft_rank_converges_to_exact_ranks():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 50))
        k = rng.permutation(np.cumsum(0.1 + rng.exponential(1.0, n)))
        np.testing.assert_allclose(soft_rank(k, 1e-4).data, descending_ranks(k), atol=1e-6, rtol=0)
        np.testing.assert_array_equal(exact_descending_ranks(k), descending_ranks(k))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1e-4, 1e-2, 0.1, 1.0, 10.0, 1e3]))
def test_soft_rank_in_permutahedron_hull(seed, eps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    r = soft_rank(rng.standard_normal(n) * 3, eps).data
    assert abs(r.sum() - n * (n + 1) / 2) <= 1e-6
    assert np.all(r >= 1 - 1e-9) and np.all(r <= n + 1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-2**20, 2**20), min_size=1, max_size=30), st.integers(-2**30, 2**30),
       st.sampled_from([2.0**-10, 0.125, 1.0, 4.0]))
def test_soft_rank_translation_covariance(ints, shift, eps):
    k = np.array(ints, dtype=float) / 256
    assert np.array_equal(soft_rank(k + shift / 256, eps).data, soft_rank(k, eps).data)


def test_soft_rank_translation_general_floats():
    rng = np.random.default_rng(2)
    for _ in range(50):
        k, c = rng.standard_normal(20), rng.standard_normal() * 10
        np.testing.assert_allclose(soft_rank(k + c, 0.1).data, soft_rank(k, 0.1).data, atol=1e-12, rtol=0)


def test_backward_singleton_blocks_give_zero():
    # well-separated k at small eps: every pool is a singleton, ranks are locally constant
    k = np.array([0.0, 5.0, 2.0, 9.0])
    r, trace = soft_rank_forward(k, 1e-3)
    assert len(np.unique(trace.block_id)) == 4
    np.testing.assert_array_equal(soft_rank_backward(np.array([1.0, -2.0, 0.5, 3.0]), trace), np.zeros(4))


def test_backward_one_global_block_is_centred_upstream():
    k = np.array([0.01, -0.02, 0.03, 0.0])
    eps = 100.0
    _, trace = soft_rank_forward(k, eps)
    assert len(np.unique(trace.block_id)) == 1
    g = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(soft_rank_backward(g, trace), -(g - g.mean()) / eps, atol=1e-15)


def test_backward_rejects_stale_trace():
    _, trace = soft_rank_forward(np.arange(4.0), 0.1)
    with pytest.raises(ContractError):
        soft_rank_backward(np.ones(5), trace)


@pytest.mark.parametrize("seed", range(6))
def test_soft_rank_gradient(seed):
    assert check_soft_rank(seed, n=10) <= 1e-4


def test_soft_rank_hard_forward_mode():
    k = Tensor(np.array([0.3, -1.0, 2.0, 0.1]), requires_grad=True)
    r = soft_rank(k, 1.0, hard_forward=True)
    np.testing.assert_array_equal(r.data, [2, 4, 1, 3])
    ag.backward(ag.tsum(r * Tensor(np.arange(4.0))))
    soft = Tensor(k.data.copy(), requires_grad=True)
    ag.backward(ag.tsum(soft_rank(soft, 1.0) * Tensor(np.arange(4.0))))
    np.testing.assert_array_equal(k.grad, soft.grad)


def test_batched_soft_rank_matches_rows():
    rng = np.random.default_rng(3)
    k = rng.standard_normal((3, 4, 7))
    out = soft_rank(k, 0.5).data
    for idx in np.ndindex(3, 4):
        np.testing.assert_array_equal(out[idx], soft_rank(k[idx], 0.5).data)


def test_block_average():
    g = np.array([[1.0, 3.0, 5.0, 7.0]])
    ids = np.array([[0, 0, 1, 2]])
    np.testing.assert_array_equal(block_average(g, ids), [[2.0, 2.0, 5.0, 7.0]])


def test_xi_ignores_rank_reversal():
    rng = np.random.default_rng(4)
    for _ in range(50):
        r = rng.permutation(12) + 1.0
        assert xi_from_rank_sequence(r) == xi_from_rank_sequence(13 - r)


def test_pav_margin_flags_near_kinks():
    assert pav_margin(np.array([0.0, 5.0, 9.0]), 1e-2) > 1.0
    # -k/eps sorted minus rho has two nearly equal neighbours here
    k = np.array([0.0, 1.0 + 1e-9])
    assert pav_margin(k, 1.0) < 1e-6
