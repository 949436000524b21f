"""Permutation matrices, the SoftSort relaxation and straight-through sorting.

SoftSort relaxes the descending argsort of ``q`` into the row-stochastic
matrix ``softmax(-|sort_desc(q) 1^T - 1 q^T| / tau)`` (row-wise). The hard
permutation is always the exact stable argsort, never the row argmax of the
soft matrix, so it is a valid bijection even under near-ties.

All functions operate on the last axis and accept arbitrary leading batch
axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .autograd import Tensor, as_tensor, custom_grad, grad_enabled, neg
from .errors import BijectionError, DimensionError, ParameterError


@dataclass(frozen=True)
class Permutation:
    """A bijection of ``{0, ..., n-1}``; ``indices[i]`` is the source of slot ``i``."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
            raise BijectionError(f"permutation must be a 1-d integer vector, got {idx!r}")
        if not np.array_equal(np.sort(idx), np.arange(idx.size)):
            raise BijectionError(f"{idx.tolist()} is not a bijection of 0..{idx.size - 1}")
        object.__setattr__(self, "indices", idx.astype(np.int64))

    @classmethod
    def from_one_based(cls, seq) -> "Permutation":
        return cls(np.asarray(seq, dtype=np.int64) - 1)

    def one_based(self) -> list[int]:
        return (self.indices + 1).tolist()

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.indices))

    def __len__(self):
        return self.indices.size


def permutation_matrix(p: Permutation | np.ndarray) -> Tensor:
    """Binary matrix ``M`` with ``M[i, p[i]] = 1`` so that ``M @ q = q[p]``."""
    if not isinstance(p, Permutation):
        p = Permutation(np.asarray(p))
    n = len(p)
    m = np.zeros((n, n))
    m[np.arange(n), p.indices] = 1.0
    return Tensor(m)


def descending_argsort(q) -> np.ndarray:
    """Stable descending argsort along the last axis; ties keep index order."""
    return np.argsort(-np.asarray(q, dtype=np.float64), axis=-1, kind="stable")


def ascending_argsort(q) -> np.ndarray:
    return np.argsort(np.asarray(q, dtype=np.float64), axis=-1, kind="stable")


def one_hot_rows(perm: np.ndarray) -> np.ndarray:
    n = perm.shape[-1]
    out = np.zeros(perm.shape + (n,))
    np.put_along_axis(out, perm[..., None], 1.0, axis=-1)
    return out


@dataclass
class SoftPermutation:
    """Soft relaxation of a descending argsort plus the exact permutation.

    ``soft`` is ``None`` when it was not needed (no gradient recording).
    ``hard`` holds the 0-based stable argsort indices along the last axis.
    """

    soft: Tensor | None
    hard: np.ndarray
    tau: float

    @property
    def n(self) -> int:
        return self.hard.shape[-1]

    def permutation(self) -> Permutation:
        if self.hard.ndim != 1:
            raise DimensionError(f"batched soft permutation of shape {self.hard.shape}")
        return Permutation(self.hard)

    def hard_matrix(self) -> np.ndarray:
        return one_hot_rows(self.hard)


@numba.njit(cache=True)
def _softsort_forward(q, perm, tau):
    rows, n = q.shape
    out = np.empty((rows, n, n))
    for r in range(rows):
        for i in range(n):
            a = q[r, perm[r, i]]
            total = 0.0
            # the largest logit is exactly 0 (at j = perm[r, i]), so no max shift is needed
            for j in range(n):
                e = np.exp(-abs(a - q[r, j]) / tau)
                out[r, i, j] = e
                total += e
            for j in range(n):
                out[r, i, j] /= total
    return out


@numba.njit(cache=True)
def _softsort_backward(g, p, q, perm, tau):
    """Softmax Jacobian, then d|a_i - q_j| with sign(0) = 0, then scatter via perm."""
    rows, n = q.shape
    gq = np.zeros((rows, n))
    for r in range(rows):
        for i in range(n):
            a = q[r, perm[r, i]]
            dot = 0.0
            for j in range(n):
                dot += g[r, i, j] * p[r, i, j]
            ga = 0.0
            for j in range(n):
                d = a - q[r, j]
                if d == 0.0:
                    continue
                t = p[r, i, j] * (g[r, i, j] - dot) / tau
                if d < 0.0:
                    t = -t
                gq[r, j] += t
                ga -= t
            gq[r, perm[r, i]] += ga
    return gq


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0.0:
        raise ParameterError(f"temperature tau must be > 0, got {tau}")
    return tau


def soft_sort(q, tau: float = 1.0, need_soft: bool = True) -> SoftPermutation:
    """SoftSort relaxation of the descending argsort of ``q`` (last axis).

    The soft matrix is a tape node with a hand-written backward: the softmax
    Jacobian, then the L1 distance kernel (sign(0) = 0), then a scatter of
    the sorted-value gradient back through the hard permutation.
    """
    q = as_tensor(q)
    tau = _check_tau(tau)
    if not np.all(np.isfinite(q.data)):
        raise ParameterError("soft_sort received non-finite entries")
    perm = descending_argsort(q.data)
    if not need_soft:
        return SoftPermutation(None, perm, tau)

    lead = q.shape[:-1]
    n = q.shape[-1]
    q2 = np.ascontiguousarray(q.data.reshape(-1, n))
    perm2 = np.ascontiguousarray(perm.reshape(-1, n))
    p = _softsort_forward(q2, perm2, tau).reshape(*lead, n, n)

    def bw(g):
        g2 = np.ascontiguousarray(g.reshape(-1, n, n))
        return (_softsort_backward(g2, p.reshape(-1, n, n), q2, perm2, tau).reshape(q.shape),)

    soft = custom_grad(p, (q,), bw, name="soft_sort")
    return SoftPermutation(soft, perm, tau)


def sort_keys_by_queries(sp: SoftPermutation, keys, straight_through: bool = True) -> Tensor:
    """Rearrange every key row by every query row's permutation.

    With ``sp`` built from queries of shape ``(..., Lq, n)`` and ``keys`` of
    shape ``(..., Lk, n)`` the result has shape ``(..., Lq, Lk, n)`` and
    entry ``[..., i, j, :]`` is key ``j`` permuted by query ``i``.

    The backward rule is that of the soft product ``P_i @ k_j`` in both
    modes. With ``straight_through`` the forward value is the exact
    permutation; otherwise it is the soft product itself.
    """
    keys = as_tensor(keys)
    perm = sp.hard
    if keys.shape[-1] != perm.shape[-1] or keys.shape[:-2] != perm.shape[:-2]:
        raise DimensionError(f"queries {perm.shape} and keys {keys.shape} do not align")
    kd = keys.data
    lead = perm.shape[:-2]
    lq, n = perm.shape[-2:]
    lk = kd.shape[-2]

    if not straight_through and sp.soft is None:
        raise ValueError("the soft forward path needs a soft matrix; build it with need_soft=True")
    if straight_through:
        value = np.take_along_axis(kd[..., None, :, :], perm[..., :, None, :], axis=-1)
    else:
        # (..., Lq, n, n) @ (..., 1, n, Lk) -> (..., Lq, n, Lk)
        value = np.swapaxes(sp.soft.data @ np.swapaxes(kd, -1, -2)[..., None, :, :], -1, -2)
    if sp.soft is None:
        return Tensor(value) if not keys.requires_grad else _hard_only(value, keys, perm)

    pd = sp.soft.data

    def bw(g):
        # g: (..., Lq, Lk, n)
        gp = np.swapaxes(g, -1, -2) @ kd[..., None, :, :]
        gt = np.swapaxes(g, -2, -3).reshape(*lead, lk, lq * n)
        gk = gt @ pd.reshape(*lead, lq * n, n)
        return gp, gk

    return custom_grad(value, (sp.soft, keys), bw, name="sort_keys_by_queries")


def _hard_only(value, keys: Tensor, perm: np.ndarray) -> Tensor:
    """Exact permutation with its own (hard) gradient, used when no soft matrix exists."""

    def bw(g):
        out = np.zeros(keys.shape)
        inv = np.argsort(perm, axis=-1)
        back = np.take_along_axis(g, inv[..., :, None, :], axis=-1)
        out += back.sum(axis=-3)
        return (out,)

    return custom_grad(value, (keys,), bw, name="hard_permute")


def apply_ascending(q, v, tau: float = 1.0, straight_through: bool = True) -> Tensor:
    """Reorder ``v`` by the ascending order of ``q`` (both 1-d of equal length).

    Ascending order is the descending SoftSort of ``-q``. Gradients flow as if
    ``v`` had been multiplied by that soft matrix.
    """
    q, v = as_tensor(q), as_tensor(v)
    if q.ndim != 1 or q.shape != v.shape:
        raise DimensionError(f"apply_ascending needs equal-length vectors, got {q.shape} and {v.shape}")
    need_soft = not straight_through or grad_enabled() and (q.requires_grad or v.requires_grad)
    sp = soft_sort(neg(q.reshape(1, -1)), tau, need_soft=need_soft)
    return sort_keys_by_queries(sp, v.reshape(1, -1), straight_through).reshape(-1)
