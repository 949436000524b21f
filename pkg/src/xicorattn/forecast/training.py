"""Mini-batch Adam training on sliding windows, plus MAE/MSE evaluation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..errors import ConfigError, TrainingDiverged
from .data import SeriesDataset
from .model import Adam, ForecastModel, clip_grad_norm
from .patching import PatchConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int = 5
    grad_clip: float = 1.0
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if min(self.batch_size, self.patience, self.eval_batch_size) < 1:
            raise ConfigError("batch_size, patience and eval_batch_size must be positive")
        if not (self.lr > 0 and 0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("need lr > 0, 0 < beta1, beta2 < 1 and adam_eps > 0")


@dataclass
class EvalReport:
    mae: float
    mse: float
    per_horizon_mae: list[float]
    per_horizon_mse: list[float]
    seconds: float
    fingerprint: str
    split: str = "test"
    n_windows: int = 0

    def row(self) -> dict:
        return {"split": self.split, "mae": self.mae, "mse": self.mse, "n_windows": self.n_windows,
                "seconds": self.seconds, "fingerprint": self.fingerprint}


@dataclass
class TrainResult:
    model: ForecastModel
    curve: list[dict] = field(default_factory=list)
    fingerprint: str = ""
    best_epoch: int = 0


def fingerprint(model: ForecastModel, train_cfg: TrainConfig | None = None, dataset: SeriesDataset | None = None) -> str:
    payload = {
        "attention": asdict(model.attn_cfg),
        "patch": asdict(model.patch_cfg),
        "model": asdict(model.model_cfg),
        "n_vars": model.n_vars,
        "seed": model.seed,
    }
    if train_cfg is not None:
        payload["train"] = asdict(train_cfg)
    if dataset is not None:
        payload["data"] = {"shape": list(dataset.values.shape), "splits": list(dataset.splits),
                           "meta": {k: v for k, v in dataset.meta.items() if k != "coupled_pairs"}}
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(target)
    return ag.mean(diff * diff)


def evaluate(model: ForecastModel, dataset: SeriesDataset, split: str = "test", raw_scale: bool = False,
             batch_size: int = 64, predictor=None) -> EvalReport:
    """MAE and MSE over every window and variable of ``split``.

    ``predictor`` replaces the model with any callable mapping a ``(B, T, C)``
    array to ``(B, H, C)`` predictions (used for baselines and tests).
    """
    pc = model.patch_cfg
    t0 = time.perf_counter()
    x_all, y_all = dataset.windows(split, pc.lookback, pc.horizon)
    abs_sum = np.zeros(pc.horizon)
    sq_sum = np.zeros(pc.horizon)
    with ag.no_grad():
        for lo in range(0, x_all.shape[0], batch_size):
            x, y = x_all[lo:lo + batch_size], y_all[lo:lo + batch_size]
            pred = predictor(x) if predictor is not None else model(x).data
            if raw_scale:
                pred, y = dataset.denormalize(pred), dataset.denormalize(y)
            err = pred - y
            abs_sum += np.abs(err).sum(axis=(0, 2))
            sq_sum += (err * err).sum(axis=(0, 2))
    per = x_all.shape[0] * dataset.n_vars
    ph_mae, ph_mse = abs_sum / per, sq_sum / per
    return EvalReport(float(ph_mae.mean()), float(ph_mse.mean()), ph_mae.tolist(), ph_mse.tolist(),
                      time.perf_counter() - t0, fingerprint(model, dataset=dataset), split, x_all.shape[0])


def train(model: ForecastModel, dataset: SeriesDataset, patch_cfg: PatchConfig | None, train_cfg: TrainConfig,
          out_dir=None) -> TrainResult:
    """Train ``model`` and restore the weights with the best validation MSE.

    The curve's first row (epoch 0) is the untrained model. Training stops
    early after ``patience`` epochs without validation improvement.
    """
    pc = patch_cfg or model.patch_cfg
    if pc != model.patch_cfg:
        raise ConfigError("patch config does not match the model's")
    fp = fingerprint(model, train_cfg, dataset)
    rng = np.random.default_rng(train_cfg.seed)
    x_train, y_train = dataset.windows("train", pc.lookback, pc.horizon)
    opt = Adam(model.parameters(), train_cfg.lr, (train_cfg.beta1, train_cfg.beta2), train_cfg.adam_eps)

    def val_row(epoch, train_loss, seconds):
        rep = evaluate(model, dataset, "valid", batch_size=train_cfg.eval_batch_size)
        return {"epoch": epoch, "train_loss": train_loss, "val_mse": rep.mse, "val_mae": rep.mae,
                "seconds": seconds}

    curve = [val_row(0, float("nan"), 0.0)]
    best, best_epoch, best_state, stale = curve[0]["val_mse"], 0, model.state_dict(), 0
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(x_train.shape[0])
        losses = []
        for lo in range(0, order.size, train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            opt.zero_grad()
            loss = mse_loss(model(x_train[idx]), y_train[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at optimisation step {step} (epoch {epoch})", step)
            ag.backward(loss)
            clip_grad_norm(model.parameters(), train_cfg.grad_clip)
            opt.step()
            losses.append(value)
            step += 1
        row = val_row(epoch, float(np.mean(losses)), time.perf_counter() - t0)
        curve.append(row)
        log.info("epoch %d train %.5f val_mse %.5f (%.1fs)", epoch, row["train_loss"], row["val_mse"], row["seconds"])
        if row["val_mse"] < best:
            best, best_epoch, best_state, stale = row["val_mse"], epoch, model.state_dict(), 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    model.load_state_dict(best_state)
    result = TrainResult(model, curve, fp, best_epoch)
    if out_dir is not None:
        write_curve(result, Path(out_dir) / "loss_curve.csv")
    return result


def write_curve(result: TrainResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_mse", "val_mae", "seconds", "fingerprint"])
        w.writeheader()
        for row in result.curve:
            w.writerow({**row, "fingerprint": result.fingerprint})


def write_rows(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
