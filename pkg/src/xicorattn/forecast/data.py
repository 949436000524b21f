"""Multivariate series datasets: CSV ingestion, synthetic generators, windowing."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ParseError

SYNTH_KINDS = ("sine_mix", "logistic_map", "monotone_coupled", "independent_noise")


@dataclass(frozen=True)
class SeriesDataset:
    """A ``T_total x C`` series with train/valid/test boundaries.

    ``norm_stats`` holds per-variable ``(mean, std)`` computed on the train
    split only; ``std`` is clamped to 1 for constant columns, which are also
    listed in ``flagged``.
    """

    values: np.ndarray
    variable_names: tuple[str, ...]
    splits: tuple[int, int]
    norm_stats: tuple[np.ndarray, np.ndarray]
    timestamps: tuple[str, ...] | None = None
    flagged: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, values, variable_names=None, splits=None, fractions=(0.7, 0.1), timestamps=None,
              meta=None) -> "SeriesDataset":
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise ConfigError(f"series must be T x C, got shape {values.shape}")
        total, c = values.shape
        names = tuple(variable_names) if variable_names is not None else tuple(f"x{i}" for i in range(c))
        if len(names) != c:
            raise ConfigError(f"{len(names)} names for {c} columns")
        if splits is None:
            # round() so that e.g. 0.7 + 0.1 of 500 lands on 400, not 399
            train_end = int(round(total * fractions[0]))
            valid_end = train_end + int(round(total * fractions[1]))
        else:
            train_end, valid_end = (int(s) for s in splits)
        if not 0 < train_end < valid_end < total:
            raise ConfigError(f"invalid split boundaries ({train_end}, {valid_end}) for {total} rows")
        train = values[:train_end]
        mu = train.mean(axis=0)
        sd = train.std(axis=0)
        const = sd == 0.0
        sd = np.where(const, 1.0, sd)
        flagged = tuple(n for n, f in zip(names, const) if f)
        values.setflags(write=False)
        return cls(values, names, (train_end, valid_end), (mu, sd),
                   tuple(timestamps) if timestamps is not None else None, flagged, dict(meta or {}))

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def normalized(self) -> np.ndarray:
        mu, sd = self.norm_stats
        return (self.values - mu) / sd

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        mu, sd = self.norm_stats
        return x * sd + mu

    def split_bounds(self, split: str) -> tuple[int, int]:
        train_end, valid_end = self.splits
        return {"train": (0, train_end), "valid": (train_end, valid_end),
                "test": (valid_end, self.values.shape[0])}[split]

    def split_values(self, split: str) -> np.ndarray:
        lo, hi = self.split_bounds(split)
        return self.values[lo:hi]

    def segment(self, split: str, lookback: int, normalized: bool = True) -> np.ndarray:
        """Rows available to windows of ``split``.

        Validation and test windows may draw their lookback from the rows just
        before the split, so their target spans cover the split itself.
        """
        lo, hi = self.split_bounds(split)
        if split != "train":
            lo = max(0, lo - lookback)
        data = self.normalized if normalized else self.values
        return data[lo:hi]

    def n_windows(self, split: str, lookback: int, horizon: int) -> int:
        return max(0, self.segment(split, lookback).shape[0] - lookback - horizon + 1)

    def windows(self, split: str, lookback: int, horizon: int, starts=None, normalized: bool = True):
        """Stack ``(x, y)`` windows of shapes ``(B, T, C)`` and ``(B, H, C)``."""
        seg = self.segment(split, lookback, normalized)
        count = seg.shape[0] - lookback - horizon + 1
        if count <= 0:
            raise ConfigError(
                f"split {split!r} has {seg.shape[0]} usable rows, fewer than lookback+horizon={lookback + horizon}"
            )
        starts = np.arange(count) if starts is None else np.asarray(starts)
        idx_x = starts[:, None] + np.arange(lookback)[None, :]
        idx_y = starts[:, None] + lookback + np.arange(horizon)[None, :]
        return seg[idx_x], seg[idx_y]


@dataclass(frozen=True)
class CsvSchema:
    """How to read and split a benchmark-style CSV.

    ``split_indices`` wins over ``fractions`` when given. When ``lookback``
    and ``horizon`` are set, every split must fit at least one window.
    """

    fractions: tuple[float, float] = (0.7, 0.1)
    split_indices: tuple[int, int] | None = None
    timestamp: bool = True
    lookback: int | None = None
    horizon: int | None = None


def load_csv(path, schema: CsvSchema | None = None) -> SeriesDataset:
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path} is empty", row=0)
    header = rows[0]
    first = 1 if schema.timestamp else 0
    names = header[first:]
    values = np.empty((len(rows) - 1, len(names)))
    stamps = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{i}: expected {len(header)} cells, got {len(row)}", row=i)
        if schema.timestamp:
            stamps.append(row[0])
        for j, cell in enumerate(row[first:]):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}:{i}: non-numeric cell {cell!r} in column {names[j]!r}", row=i, column=names[j]
                ) from None
    ds = SeriesDataset.build(values, names, splits=schema.split_indices, fractions=schema.fractions,
                             timestamps=stamps if schema.timestamp else None, meta={"source": str(path)})
    if schema.lookback is not None and schema.horizon is not None:
        for split in ("train", "valid", "test"):
            if ds.n_windows(split, schema.lookback, schema.horizon) < 1:
                raise ConfigError(
                    f"{path}: split {split!r} is too short for lookback {schema.lookback} + horizon {schema.horizon}"
                )
    return ds


def write_csv(ds: SeriesDataset, path) -> None:
    stamps = ds.timestamps or _hourly_stamps(ds.values.shape[0])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *ds.variable_names])
        for stamp, row in zip(stamps, ds.values):
            w.writerow([stamp, *(repr(float(v)) for v in row)])


def _hourly_stamps(n: int) -> list[str]:
    t0 = datetime(2016, 7, 1)
    return [(t0 + timedelta(hours=i)).strftime("%Y-%m-%d %H:%M:%S") for i in range(n)]


# ----------------------------------------------------------------------------
# synthetic data


def _sine_mix(rng, t_total, c):
    t = np.arange(t_total)[:, None]
    out = np.zeros((t_total, c))
    for _ in range(3):
        period = rng.uniform(8, 64, size=c)
        phase = rng.uniform(0, 2 * np.pi, size=c)
        amp = rng.uniform(0.5, 1.5, size=c)
        out += amp * np.sin(2 * np.pi * t / period + phase)
    return out + 0.1 * rng.standard_normal((t_total, c))


def _logistic_map(rng, t_total, c, coupling=0.2, r=3.9):
    """Coupled logistic maps riding on a per-variable seasonal carrier.

    The chaotic state follows ``x <- (1 - a) f(x_c) + a f(x_{c-1})`` with
    ``f(x) = r x (1 - x)``; the carrier keeps long horizons partly predictable.
    """
    x = np.empty((t_total, c))
    state = rng.uniform(0.1, 0.9, size=c)
    for _ in range(100):
        f = r * state * (1 - state)
        state = (1 - coupling) * f + coupling * np.roll(f, 1)
    for i in range(t_total):
        f = r * state * (1 - state)
        state = (1 - coupling) * f + coupling * np.roll(f, 1)
        x[i] = state
    t = np.arange(t_total)[:, None]
    period = rng.uniform(12, 48, size=c)
    phase = rng.uniform(0, 2 * np.pi, size=c)
    return np.sin(2 * np.pi * t / period + phase) + (x - 0.5)


def _monotone_coupled(rng, t_total, c):
    """Pairs (x, f(x)) with strictly increasing f; an odd last column is a free walk."""
    out = np.empty((t_total, c))
    fns = (np.exp, lambda v: v**3 + v, np.arctan, lambda v: np.sinh(v / 2))
    pairs = []
    for j in range(0, c - 1, 2):
        walk = np.cumsum(rng.standard_normal(t_total)) / np.sqrt(t_total) * 3
        out[:, j] = walk
        out[:, j + 1] = fns[(j // 2) % len(fns)](walk)
        pairs.append((j, j + 1))
    if c % 2:
        out[:, -1] = np.cumsum(rng.standard_normal(t_total)) / np.sqrt(t_total) * 3
    return out, pairs


def synth_dataset(kind: str, t_total: int = 1000, n_vars: int = 4, seed: int = 0,
                  fractions=(0.7, 0.1)) -> SeriesDataset:
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    if t_total < 400:
        raise ConfigError(f"synthetic series need T_total >= 400, got {t_total}")
    if n_vars < 1:
        raise ConfigError("need at least one variable")
    rng = np.random.default_rng(seed)
    meta = {"kind": kind, "seed": seed}
    if kind == "sine_mix":
        values = _sine_mix(rng, t_total, n_vars)
    elif kind == "logistic_map":
        values = _logistic_map(rng, t_total, n_vars)
    elif kind == "monotone_coupled":
        values, pairs = _monotone_coupled(rng, t_total, n_vars)
        meta["coupled_pairs"] = pairs
    else:
        values = rng.uniform(size=(t_total, n_vars))
    names = [f"{kind}_{i}" for i in range(n_vars)]
    return SeriesDataset.build(values, names, fractions=fractions, timestamps=_hourly_stamps(t_total), meta=meta)
