"""Head-dimension sweeps and runtime benchmarks."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from .. import autograd as ag
from ..errors import ConfigError
from ..softrank import soft_rank
from ..autograd import Tensor
from .config import ExperimentConfig
from .data import CsvSchema, SeriesDataset, load_csv, synth_dataset
from .model import Adam, ForecastModel
from .training import evaluate, mse_loss, train


def build_dataset(cfg: ExperimentConfig) -> SeriesDataset:
    d = cfg.data
    fractions = (d.get("train_frac", 0.7), d.get("valid_frac", 0.1))
    if d.get("data"):
        return load_csv(d["data"], CsvSchema(fractions=fractions, lookback=cfg.patch.lookback,
                                             horizon=cfg.patch.horizon))
    return synth_dataset(d.get("synth", "logistic_map"), d.get("t_total", 1000), d.get("n_vars", 4),
                         d.get("data_seed", 0), fractions)


def build_model(cfg: ExperimentConfig, n_vars: int) -> ForecastModel:
    return ForecastModel(cfg.attention, cfg.patch, cfg.model, n_vars=n_vars, seed=cfg.train.seed)


def sweep_head_dim(dims, base_cfg: ExperimentConfig, dataset: SeriesDataset | None = None) -> list[dict]:
    """Train one model per head dimension at fixed model_dim; one row per d."""
    D = base_cfg.attention.model_dim
    for d in dims:
        if d <= 0 or D % d:
            raise ConfigError(f"model_dim {D} is not divisible by head dimension {d}")
    dataset = dataset or build_dataset(base_cfg)
    rows = []
    for d in dims:
        cfg = replace(base_cfg, attention=base_cfg.attention.replace(n_head=D // d))
        res = train(build_model(cfg, dataset.n_vars), dataset, cfg.patch, cfg.train)
        rep = evaluate(res.model, dataset, "test", batch_size=cfg.train.eval_batch_size)
        rows.append({"head_dim": d, "n_head": D // d, "kernel": cfg.attention.kernel, "test_mse": rep.mse,
                     "test_mae": rep.mae, "best_epoch": res.best_epoch, "fingerprint": res.fingerprint})
    return rows


def time_train_step(model: ForecastModel, x: np.ndarray, y: np.ndarray, warmup: int = 1, reps: int = 3) -> float:
    """Best-of-``reps`` wall-clock seconds for one forward/backward/Adam step."""
    opt = Adam(model.parameters(), lr=1e-4)

    def step():
        opt.zero_grad()
        loss = mse_loss(model(x), y)
        ag.backward(loss)
        opt.step()

    for _ in range(warmup):
        step()
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        step()
        best = min(best, time.perf_counter() - t0)
    return float(best)


def bench_runtime(lookbacks, kernels, base_cfg: ExperimentConfig, batch_size: int = 8, n_vars: int = 2,
                  warmup: int = 1, reps: int = 3, seed: int = 0) -> list[dict]:
    """Seconds per training step for every (lookback, kernel) pair."""
    rng = np.random.default_rng(seed)
    rows = []
    for T in lookbacks:
        patch = replace(base_cfg.patch, lookback=T)
        x = rng.standard_normal((batch_size, T, n_vars))
        y = rng.standard_normal((batch_size, patch.horizon, n_vars))
        for kernel in kernels:
            cfg = replace(base_cfg, patch=patch, attention=base_cfg.attention.replace(kernel=kernel))
            model = build_model(cfg, n_vars)
            secs = time_train_step(model, x, y, warmup, reps)
            rows.append({"lookback": T, "kernel": kernel, "patches": patch.patch_count,
                         "seconds_per_step": secs})
    return rows


def bench_soft_rank(sizes=(1000, 2000, 4000, 8000), reps: int = 7, inner: int = 20, seed: int = 0) -> list[dict]:
    """Forward+backward soft_rank timing per vector size, with doubling ratios."""
    rng = np.random.default_rng(seed)
    # compile the PAV kernel outside the timed region
    soft_rank(Tensor(rng.standard_normal(8)), 0.1)
    rows = []
    prev = None
    for n in sizes:
        k = Tensor(rng.standard_normal(n), requires_grad=True)
        g = rng.standard_normal(n)
        best = np.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            for _ in range(inner):
                r = soft_rank(k, 0.1)
                ag.backward(r, grad=g)
            best = min(best, (time.perf_counter() - t0) / inner)
        rows.append({"n": n, "seconds": best, "ratio": best / prev if prev else float("nan")})
        prev = best
    return rows
