"""Finite-difference gradient suite shared by the ``grad-check`` command and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention import AttentionConfig, finite_difference, grad_check_attention, relative_error, xi_soft
from .autograd import Tensor
from .softrank import pav_margin, soft_rank
from .softsort import apply_ascending, soft_sort


@dataclass
class GradResult:
    name: str
    rel_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(self.rel_error <= self.tolerance)


def _min_gap(v: np.ndarray) -> float:
    s = np.sort(v, axis=-1)
    return float(np.min(np.diff(s, axis=-1), initial=np.inf))


def _sample(rng, shape, ok, tries: int = 200) -> np.ndarray:
    for _ in range(tries):
        x = rng.standard_normal(shape)
        if ok(x):
            return x
    raise RuntimeError(f"could not draw a non-degenerate point of shape {shape}")


def _check(fn_tensor, arrays, h: float) -> float:
    """Relative error between tape gradients of ``sum(fn * R)`` and central differences."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn_tensor(*leaves)
    R = np.random.default_rng(123).standard_normal(out.shape)
    ag.backward(ag.tsum(out * Tensor(R)))

    def value():
        with ag.no_grad():
            return float((fn_tensor(*[Tensor(a) for a in arrays]).data * R).sum())

    numeric = finite_difference(value, arrays, h)
    return max(relative_error(t.grad, g) for t, g in zip(leaves, numeric))


def check_mlp(seed: int = 0, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal((5, 4)), rng.standard_normal((4, 6)) * 0.5, rng.standard_normal(6) * 0.1,
              rng.standard_normal((6, 3)) * 0.5]

    def mlp(x, w1, b1, w2):
        z = ag.tanh(ag.matmul(x, w1) + b1)
        return ag.row_softmax(ag.matmul(z, w2))

    return _check(mlp, arrays, h)


def check_soft_sort(seed: int = 0, n: int = 6, tau: float = 0.7, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    q = _sample(rng, (n,), lambda x: _min_gap(x) >= 1e-3)
    return _check(lambda t: soft_sort(t, tau).soft, [q], h)


def check_soft_rank(seed: int = 0, n: int = 10, epsilon: float = 0.5, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    k = _sample(rng, (n,), lambda x: _min_gap(x) >= 1e-3 and pav_margin(x, epsilon) >= 1e-2)
    return _check(lambda t: soft_rank(t, epsilon), [k], h)


def check_xi_soft(seed: int = 0, d: int = 8, tau: float = 1.0, epsilon: float = 0.1, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)

    def ok(pair):
        q, k = pair
        if _min_gap(q) < 1e-3 or _min_gap(k) < 1e-3:
            return False
        with ag.no_grad():
            ks = apply_ascending(Tensor(q), Tensor(k), tau, straight_through=False)
        return pav_margin(ks.data, epsilon) >= 1e-2

    pair = _sample(rng, (2, d), ok)
    q, k = pair[0].copy(), pair[1].copy()
    return _check(lambda a, b: xi_soft(a, b, tau, epsilon, straight_through=False).reshape(1), [q, k], h)


TOLERANCES = {"mlp": 1e-5, "soft_sort": 1e-4, "soft_rank": 1e-4, "xi_soft": 1e-4,
              "attention_xicor": 1e-3, "attention_dot_product": 1e-6}


def run_suite(seeds=(0, 1, 2), model_dim: int = 8, n_head: int = 2) -> list[GradResult]:
    """Worst relative error over ``seeds`` for every differentiable building block."""
    checks = {
        "mlp": check_mlp,
        "soft_sort": check_soft_sort,
        "soft_rank": check_soft_rank,
        "xi_soft": check_xi_soft,
        "attention_dot_product": lambda s: max(grad_check_attention(
            AttentionConfig(model_dim=model_dim, n_head=n_head, kernel="dot_product"), s).max_rel_error.values()),
        "attention_xicor": lambda s: max(grad_check_attention(
            AttentionConfig(model_dim=model_dim, n_head=n_head, kernel="xicor"), s).max_rel_error.values()),
    }
    return [GradResult(name, max(fn(s) for s in seeds), TOLERANCES[name]) for name, fn in checks.items()]
