"""Soft ranks by quadratic-regularised projection onto the permutahedron.

The projection of ``z = -k / eps`` onto the permutahedron of
``rho = (n, n-1, ..., 1)`` reduces to a non-increasing isotonic regression of
``sort_desc(z) - rho``, solved by Pool-Adjacent-Violators. The block structure
PAV produces is kept so the backward pass is an O(n) block average.

Ranks follow the descending convention: as ``eps -> 0`` the largest entry of
``k`` gets rank 1 and the smallest gets rank n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .autograd import Tensor, as_tensor, custom_grad
from .errors import ContractError, ParameterError


@numba.njit(cache=True)
def _pav_rows(w, sol, block_id):
    """Non-increasing isotonic regression of each row of ``w`` (in place into ``sol``).

    ``block_id[r, i]`` receives the index of the pool containing position i.
    Adjacent pools are merged while the earlier mean is <= the later one, so
    the surviving pool means are strictly decreasing.
    """
    rows, n = w.shape
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    starts = np.empty(n, dtype=np.int64)
    for r in range(rows):
        top = -1
        for i in range(n):
            top += 1
            sums[top] = w[r, i]
            counts[top] = 1
            starts[top] = i
            while top > 0 and sums[top - 1] * counts[top] <= sums[top] * counts[top - 1]:
                sums[top - 1] += sums[top]
                counts[top - 1] += counts[top]
                top -= 1
        for b in range(top + 1):
            m = sums[b] / counts[b]
            s = starts[b]
            for i in range(s, s + counts[b]):
                sol[r, i] = m
                block_id[r, i] = b
    return sol


def _pav(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = np.ascontiguousarray(w.reshape(-1, w.shape[-1]), dtype=np.float64)
    sol = np.empty_like(flat)
    ids = np.empty(flat.shape, dtype=np.int64)
    _pav_rows(flat, sol, ids)
    return sol.reshape(w.shape), ids.reshape(w.shape)


@dataclass
class IsotonicSolution:
    """Solution of min 0.5 ||v - w||^2 subject to v_1 >= ... >= v_n.

    ``blocks`` lists the PAV pools as half-open ``(start, end, mean)`` records.
    """

    v: np.ndarray
    blocks: list[tuple[int, int, float]]


def isotonic_regression(w) -> IsotonicSolution:
    w = np.asarray(as_tensor(w).data, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"isotonic_regression expects a vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("isotonic_regression received non-finite entries")
    v, ids = _pav(w)
    blocks = []
    edges = np.flatnonzero(np.diff(ids)) + 1
    bounds = np.concatenate([[0], edges, [w.size]])
    for s, e in zip(bounds[:-1], bounds[1:]):
        blocks.append((int(s), int(e), float(v[s])))
    return IsotonicSolution(v, blocks)


@numba.njit(cache=True)
def _block_average_rows(g, block_id):
    rows, n = g.shape
    out = np.empty_like(g)
    for r in range(rows):
        i = 0
        while i < n:
            j = i
            total = 0.0
            while j < n and block_id[r, j] == block_id[r, i]:
                total += g[r, j]
                j += 1
            m = total / (j - i)
            for t in range(i, j):
                out[r, t] = m
            i = j
    return out


def block_average(g: np.ndarray, block_id: np.ndarray) -> np.ndarray:
    """Replace every entry of each row by the mean of its (contiguous) PAV block."""
    n = g.shape[-1]
    g2 = np.ascontiguousarray(g.reshape(-1, n), dtype=np.float64)
    ids = np.ascontiguousarray(block_id.reshape(-1, n))
    return _block_average_rows(g2, ids).reshape(g.shape)


@dataclass
class SoftRankTrace:
    """What the backward pass needs from one forward soft_rank call."""

    perm: np.ndarray  # descending order of -k (ascending order of k)
    block_id: np.ndarray  # PAV pool index of each sorted position
    epsilon: float

    @property
    def n(self) -> int:
        return self.perm.shape[-1]


@dataclass
class RankVector:
    values: np.ndarray
    convention: str  # "descending_soft" or "ascending_exact" / "descending_exact"
    epsilon: float | None = None


def _check_eps(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not epsilon > 0.0:
        raise ParameterError(f"regularisation epsilon must be > 0, got {epsilon}")
    return epsilon


def soft_rank_forward(k: np.ndarray, epsilon: float) -> tuple[np.ndarray, SoftRankTrace]:
    """Soft descending ranks along the last axis, plus the trace for backward.

    ``-k / eps`` is taken relative to ``max(k)``. The projection is
    shift-equivariant, so this changes nothing mathematically, but it makes
    a uniform shift of ``k`` cancel before any rounding whenever the shift
    itself is exact.
    """
    epsilon = _check_eps(epsilon)
    k = np.asarray(k, dtype=np.float64)
    n = k.shape[-1]
    z = (k.max(axis=-1, keepdims=True) - k) / epsilon
    perm = np.argsort(-z, axis=-1, kind="stable")
    s = np.take_along_axis(z, perm, axis=-1)
    rho = np.arange(n, 0, -1, dtype=np.float64)
    v, ids = _pav(s - rho)
    r = np.empty_like(s)
    np.put_along_axis(r, perm, s - v, axis=-1)
    return r, SoftRankTrace(perm, ids, epsilon)


def soft_rank_backward(upstream, trace: SoftRankTrace) -> np.ndarray:
    """Vector-Jacobian product of :func:`soft_rank` in O(n) per row."""
    g = np.asarray(as_tensor(upstream).data, dtype=np.float64)
    if g.shape != trace.perm.shape:
        raise ContractError(f"upstream shape {g.shape} does not match the trace {trace.perm.shape}")
    g_sorted = np.take_along_axis(g, trace.perm, axis=-1)
    avg = block_average(g_sorted, trace.block_id)
    back = np.empty_like(g)
    np.put_along_axis(back, trace.perm, avg, axis=-1)
    return -(g - back) / trace.epsilon


def pav_margin(k, epsilon: float) -> float:
    """Distance (in units of ``k / eps``) to the nearest change of PAV pool structure.

    Soft ranks are smooth only while the pools stay the same. A pool stops
    being optimal when two adjacent means meet (merge) or when a prefix of a
    pool rises above the pool mean (split); the smallest such gap over all
    rows is returned. Intended for choosing finite-difference test points.
    """
    epsilon = _check_eps(epsilon)
    k = np.asarray(as_tensor(k).data, dtype=np.float64)
    n = k.shape[-1]
    z = (k.max(axis=-1, keepdims=True) - k) / epsilon
    s = -np.sort(-z, axis=-1)
    w = (s - np.arange(n, 0, -1, dtype=np.float64)).reshape(-1, n)
    v, ids = _pav(w)
    best = np.inf
    for row, sol, bid in zip(w, v, ids):
        edges = np.concatenate([[0], np.flatnonzero(np.diff(bid)) + 1, [n]])
        means = sol[edges[:-1]]
        if means.size > 1:
            best = min(best, float(np.min(means[:-1] - means[1:])))
        for a, b, m in zip(edges[:-1], edges[1:], means):
            if b - a > 1:
                prefix = np.cumsum(row[a:b - 1]) / np.arange(1, b - a)
                best = min(best, float(np.min(m - prefix)))
        # near-ties in z also move the sort order
        best = min(best, float(np.min(np.diff(-s.reshape(-1, n)), initial=np.inf)))
    return best


def exact_descending_ranks(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    order = np.argsort(-k, axis=-1, kind="stable")
    r = np.empty(k.shape)
    np.put_along_axis(r, order, np.broadcast_to(np.arange(1.0, k.shape[-1] + 1), k.shape), axis=-1)
    return r


def soft_rank(k, epsilon: float = 0.1, hard_forward: bool = False) -> Tensor:
    """Differentiable descending ranks of ``k`` along the last axis.

    With ``hard_forward`` the forward value is the exact rank vector while the
    gradient is still that of the soft projection.
    """
    k = as_tensor(k)
    r, trace = soft_rank_forward(k.data, epsilon)
    value = exact_descending_ranks(k.data) if hard_forward else r
    return custom_grad(value, (k,), lambda g: (soft_rank_backward(g, trace),), name="soft_rank")


def soft_rank_vector(k, epsilon: float = 0.1) -> RankVector:
    r, _ = soft_rank_forward(as_tensor(k).data, epsilon)
    return RankVector(r, "descending_soft", float(epsilon))
