import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xicorattn import autograd as ag
from xicorattn.attention import (
    AttentionConfig,
    AttentionWeights,
    attention_forward,
    grad_check_attention,
    reference_dot_attention,
    score_matrix,
    xi_soft,
)
from xicorattn.autograd import Tensor
from xicorattn.errors import ConfigError
from xicorattn.gradcheck import check_xi_soft
from xicorattn.rankstats import xi_bounds, xi_exact


def separated(rng, n, gap=0.1):
    steps = gap + rng.exponential(1.0, n)
    return rng.permutation(np.cumsum(steps) - steps.sum() / 2)


def cfg_for(d, **kw):
    return AttentionConfig(model_dim=d, n_head=1, **kw)


def test_xi_soft_examples():
    q = np.array([1.0, 2.0, 3.0, 4.0])
    assert float(xi_soft(q, q, epsilon=1e-4).data) == pytest.approx(0.4, abs=1e-4)
    assert float(xi_soft(q, np.array([2.0, 4.0, 1.0, 3.0]), epsilon=1e-4).data) == pytest.approx(-0.4, abs=1e-3)


def test_xi_soft_errors():
    with pytest.raises(ConfigError):
        xi_soft(np.ones(2), np.ones(2))
    with pytest.raises(ConfigError):
        xi_soft(np.arange(4.0), np.arange(5.0))
    with pytest.raises(ConfigError):
        AttentionConfig(model_dim=4, n_head=2)
    with pytest.raises(ConfigError):
        AttentionConfig(model_dim=10, n_head=3)


@pytest.mark.parametrize("tau", [1e-3, 1.0, 100.0])
def test_xi_soft_matches_exact_on_separated_pairs(tau):
    rng = np.random.default_rng(int(tau * 1000))
    for _ in range(30):
        q, k = separated(rng, 64), separated(rng, 64)
        assert abs(float(xi_soft(q, k, tau, 1e-4).data) - xi_exact(q, k)) <= 1e-3


def test_xi_soft_is_on_tape():
    q = Tensor(np.array([0.3, -1.2, 2.0, 0.7, 1.1]), requires_grad=True)
    k = Tensor(np.array([1.0, 0.1, -0.5, 2.2, 0.4]), requires_grad=True)
    ag.backward(xi_soft(q, k, 1.0, 0.5))
    assert q.grad.shape == (5,) and k.grad.shape == (5,)
    assert np.any(q.grad != 0) and np.any(k.grad != 0)


@pytest.mark.parametrize("seed", range(5))
def test_xi_soft_gradient_on_soft_path(seed):
    assert check_xi_soft(seed) <= 1e-4


def test_score_matrix_single_row():
    rng = np.random.default_rng(0)
    q, k = rng.standard_normal((1, 6)), rng.standard_normal((1, 6))
    cfg = cfg_for(6)
    assert np.array_equal(score_matrix(q, k, cfg).data, [[xi_soft(q[0], k[0], cfg.tau, cfg.epsilon).data]])


def test_score_matrix_matches_looped_xi_soft():
    rng = np.random.default_rng(1)
    Q, K = rng.standard_normal((4, 16)), rng.standard_normal((4, 16))
    for rank_mode in ("soft", "hard_forward"):
        cfg = cfg_for(16, rank_mode=rank_mode)
        S = score_matrix(Q, K, cfg).data
        loop = np.array([[float(xi_soft(Q[i], K[j], cfg.tau, cfg.epsilon, rank_mode=rank_mode).data)
                          for j in range(4)] for i in range(4)])
        assert np.array_equal(S, loop)


def test_score_matrix_monotone_diagonal():
    rng = np.random.default_rng(2)
    d = 16
    Q = np.stack([separated(rng, d) for _ in range(5)])
    K = np.sinh(Q) * 2 + 1
    S = score_matrix(Q, K, cfg_for(d, epsilon=1e-4)).data
    np.testing.assert_allclose(np.diag(S), (d - 2) / (d + 1), atol=1e-3)


def test_score_matrix_dimension_mismatch():
    with pytest.raises(ConfigError):
        score_matrix(np.ones((2, 5)), np.ones((2, 6)), cfg_for(5))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_joint_coordinate_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 20))
    Q, K = rng.standard_normal((3, d)), rng.standard_normal((4, d))
    perm = rng.permutation(d)
    cfg = cfg_for(d)
    assert np.array_equal(score_matrix(Q, K, cfg).data, score_matrix(Q[:, perm], K[:, perm], cfg).data)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["keys", "queries"]))
def test_monotone_transform_invariance(seed, side):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 20))
    Q = np.stack([separated(rng, d, 0.05) for _ in range(3)])
    K = np.stack([separated(rng, d, 0.05) for _ in range(3)])
    cfg = cfg_for(d, epsilon=1e-6)
    f = lambda x: np.exp(x / 4) + x**3  # noqa: E731  strictly increasing
    Q2, K2 = (f(Q), K) if side == "queries" else (Q, f(K))
    np.testing.assert_allclose(score_matrix(Q2, K2, cfg).data, score_matrix(Q, K, cfg).data, atol=1e-6, rtol=0)


def test_asymmetry_witness():
    x = np.linspace(-1, 1, 9)
    Q = np.stack([x, np.arange(9.0)])
    K = np.stack([x**2 + np.arange(9) * 1e-3, np.cos(np.arange(9.0))])
    cfg = cfg_for(9, epsilon=1e-4)
    assert not np.allclose(score_matrix(Q, K, cfg).data, score_matrix(K, Q, cfg).data.T, atol=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1e-6, 1e-4]))
def test_scores_within_xi_range(seed, eps):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 33))
    lo, hi = xi_bounds(d)
    # key gaps well above eps keep every soft-rank pool a singleton
    Q = rng.standard_normal((4, d))
    K = np.stack([separated(rng, d, 1e-3) for _ in range(4)])
    S = score_matrix(Q, K, cfg_for(d, epsilon=eps)).data
    assert np.all(S <= hi + 1e-6) and np.all(S >= lo - 1e-6)
    # exact ranks in the forward pass need no gap condition
    K = rng.standard_normal((4, d))
    S = score_matrix(Q, K, cfg_for(d, epsilon=1.0, rank_mode="hard_forward")).data
    assert np.all(S <= hi + 1e-12) and np.all(S >= lo - 1e-12)


def test_hard_forward_scores_equal_xi_exact():
    rng = np.random.default_rng(3)
    Q, K = rng.standard_normal((3, 12)), rng.standard_normal((3, 12))
    S = score_matrix(Q, K, cfg_for(12, rank_mode="hard_forward")).data
    for i in range(3):
        for j in range(3):
            assert S[i, j] == pytest.approx(xi_exact(Q[i], K[j]), abs=1e-12)


def test_dot_product_hand_example():
    # D = 2, one head, identity projections: S = X X^T / sqrt(2)
    X = np.array([[1.0, 0.0], [1.0, 2.0]])
    eye = np.eye(2)
    cfg = AttentionConfig(model_dim=2, n_head=1, kernel="dot_product")
    out = attention_forward(X, {"W_Q": eye, "W_K": eye, "W_V": eye, "W_O": eye}, cfg)
    s = np.array([[1.0, 1.0], [1.0, 5.0]]) / np.sqrt(2.0)
    a = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.scores.data, [s], atol=1e-12)
    np.testing.assert_allclose(out.weights.data, [a], atol=1e-12)
    expected = np.array([[a[0, 0] + a[0, 1], 2 * a[0, 1]], [a[1, 0] + a[1, 1], 2 * a[1, 1]]])
    np.testing.assert_allclose(out.output.data, expected, atol=1e-12)


def test_dot_product_matches_reference():
    rng = np.random.default_rng(4)
    cfg = AttentionConfig(model_dim=12, n_head=3, kernel="dot_product")
    w = AttentionWeights.init(12, rng)
    X = rng.standard_normal((7, 12))
    np.testing.assert_allclose(attention_forward(X, w, cfg).output.data,
                               reference_dot_attention(X, w.as_dict(), 3), atol=1e-13, rtol=0)


@pytest.mark.parametrize("kernel", ["xicor", "dot_product"])
def test_zero_values_give_zero_output(kernel):
    rng = np.random.default_rng(5)
    w = AttentionWeights.init(8, rng)
    w.W_V = Tensor(np.zeros((8, 8)))
    out = attention_forward(rng.standard_normal((5, 8)), w, AttentionConfig(model_dim=8, n_head=2, kernel=kernel))
    np.testing.assert_array_equal(out.output.data, np.zeros((5, 8)))


@pytest.mark.parametrize("score_mode", ["softmax_xi", "raw_xi_rownorm"])
def test_xicor_weights_normalised_and_shapes(score_mode):
    rng = np.random.default_rng(6)
    cfg = AttentionConfig(model_dim=16, n_head=2, score_mode=score_mode)
    out = attention_forward(rng.standard_normal((6, 16)), AttentionWeights.init(16, rng), cfg)
    assert out.output.shape == (6, 16)
    assert out.scores.shape == out.weights.shape == (2, 6, 6)
    np.testing.assert_allclose(out.weights.data.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(out.weights.data >= 0)


def test_batched_attention_matches_unbatched():
    rng = np.random.default_rng(7)
    cfg = AttentionConfig(model_dim=8, n_head=2)
    w = AttentionWeights.init(8, rng)
    X = rng.standard_normal((3, 5, 8))
    batched = attention_forward(X, w, cfg).output.data
    for b in range(3):
        np.testing.assert_allclose(batched[b], attention_forward(X[b], w, cfg).output.data, atol=1e-14)


def test_attention_shape_errors():
    rng = np.random.default_rng(8)
    cfg = AttentionConfig(model_dim=8, n_head=2)
    w = AttentionWeights.init(8, rng)
    with pytest.raises(ConfigError):
        attention_forward(np.ones((4, 6)), w, cfg)
    bad = w.as_dict()
    bad["W_O"] = np.ones((8, 4))
    with pytest.raises(ConfigError):
        attention_forward(np.ones((4, 8)), bad, cfg)


@pytest.mark.parametrize("seed", range(4))
def test_grad_check_dot_product(seed):
    rep = grad_check_attention(AttentionConfig(model_dim=8, n_head=2, kernel="dot_product"), seed)
    assert rep.worst <= 1e-6


@pytest.mark.parametrize("seed,dim", [(0, 8), (1, 8), (2, 12), (3, 16)])
def test_grad_check_xicor(seed, dim):
    rep = grad_check_attention(AttentionConfig(model_dim=dim, n_head=2, kernel="xicor"), seed)
    assert rep.worst <= 1e-3


def test_zero_upstream_gives_zero_parameter_gradients():
    rng = np.random.default_rng(9)
    w = AttentionWeights.init(8, rng)
    out = attention_forward(rng.standard_normal((4, 8)), w, AttentionConfig(model_dim=8, n_head=2))
    ag.backward(out.output, grad=np.zeros((4, 8)))
    for t in w.as_dict().values():
        np.testing.assert_array_equal(t.grad, np.zeros((8, 8)))


def test_range_needs_small_eps_or_hard_ranks():
    rng = np.random.default_rng(10)
    q, k = rng.standard_normal((2, 16))
    _, hi = xi_bounds(16)
    # large eps pools the soft ranks towards their mean, which pushes xi towards 1
    assert float(xi_soft(q, k, epsilon=10.0).data) > hi
    assert float(xi_soft(q, k, epsilon=10.0, rank_mode="hard_forward").data) <= hi
