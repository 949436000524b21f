"""Exact rank statistics: Chatterjee's xi, Pearson's rho, correlation matrices.

These are plain numpy functions with no gradient support; the differentiable
pipeline in :mod:`xicorattn.attention` is checked against them.

Ties are broken by original index (stable sort) rather than at random, so
``xi_exact`` is deterministic on tied data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"x and y differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise DomainError(f"need at least 2 samples, got {x.size}")
    return x, y


def ascending_ranks(v) -> np.ndarray:
    """1-based ascending ranks; ties resolved by position."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable", axis=-1)
    ranks = np.empty(v.shape, dtype=np.int64)
    np.put_along_axis(ranks, order, np.arange(1, v.shape[-1] + 1), axis=-1)
    return ranks


def descending_ranks(v) -> np.ndarray:
    """1-based descending ranks (largest value gets rank 1); ties resolved by position."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(-v, kind="stable", axis=-1)
    ranks = np.empty(v.shape, dtype=np.int64)
    np.put_along_axis(ranks, order, np.arange(1, v.shape[-1] + 1), axis=-1)
    return ranks


def xi_from_rank_sequence(r) -> float:
    """1 - 3 * sum|r[i+1] - r[i]| / (n^2 - 1) for ranks already in x-sorted order.

    Evaluated as ``(n^2 - 1 - 3 S) / (n^2 - 1)``: with integer ranks the
    numerator is exact, so the one rounding is the final division and the
    monotone case lands exactly on ``(n - 2) / (n + 1)``.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[-1]
    denom = n * n - 1.0
    return (denom - 3.0 * np.abs(np.diff(r, axis=-1)).sum(axis=-1)) / denom


def xi_exact(x, y) -> float:
    """Chatterjee's xi_n(x, y): how well y is explained as a function of x."""
    x, y = _pair(x, y)
    if np.all(y == y[0]):
        raise DomainError("xi is undefined for constant y")
    y_sorted = y[np.argsort(x, kind="stable")]
    return float(xi_from_rank_sequence(ascending_ranks(y_sorted)))


def xi_bounds(n: int) -> tuple[float, float]:
    """Loose lower bound and attained upper bound of xi_n on tie-free data."""
    return -0.5 - 3.0 / (n + 1), (n - 2.0) / (n + 1.0)


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0.0 or syy == 0.0:
        raise DomainError("pearson is undefined for a zero-variance input")
    rho = np.dot(xc, yc) / (np.sqrt(sxx) * np.sqrt(syy))
    return float(np.clip(rho, -1.0, 1.0))


@dataclass
class CorrelationMatrix:
    """Pairwise correlations between the columns of a data matrix.

    For ``kind == "xi"`` entry ``(i, j)`` is ``xi(column i, column j)``, i.e.
    column j explained by column i, so the matrix is not symmetric. Entries
    involving a constant column are NaN and that column is listed in
    ``flagged``.
    """

    values: np.ndarray
    kind: str
    names: list[str]
    flagged: list[str] = field(default_factory=list)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", *self.names])
            for name, row in zip(self.names, self.values):
                w.writerow([name, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path, kind: str) -> "CorrelationMatrix":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0][1:]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        flagged = [n for n, row in zip(names, values) if np.all(np.isnan(row))]
        return cls(values, kind, names, flagged)


def correlation_matrix(data, kind: str = "pearson", names=None) -> CorrelationMatrix:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionError(f"expected a T x C matrix, got shape {data.shape}")
    t, c = data.shape
    if t < 3:
        raise DomainError(f"need at least 3 rows, got {t}")
    if kind not in ("pearson", "xi"):
        raise ValueError(f"unknown correlation kind {kind!r}")
    names = list(names) if names is not None else [f"x{i}" for i in range(c)]
    const = np.all(data == data[0], axis=0)
    values = np.full((c, c), np.nan)
    for i in range(c):
        if const[i]:
            continue
        for j in range(c):
            if const[j]:
                continue
            if kind == "pearson":
                values[i, j] = 1.0 if i == j else pearson(data[:, i], data[:, j])
            else:
                values[i, j] = xi_exact(data[:, i], data[:, j])
    if kind == "pearson":
        # fill from the upper triangle so the result is exactly symmetric
        iu = np.triu_indices(c, 1)
        values[(iu[1], iu[0])] = values[iu]
    flagged = [n for n, is_const in zip(names, const) if is_const]
    return CorrelationMatrix(values, kind, names, flagged)
