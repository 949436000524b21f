"""Command-line entry point: ``xicorattn <subcommand> ...``.

Training-related commands read an optional key-value config file
(``--config``) and then apply ``--set key=value`` overrides and the
shortcut flags, in that order.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, XicorError
from .gradcheck import run_suite
from .rankstats import correlation_matrix, pearson, xi_exact
from .softrank import exact_descending_ranks, soft_rank_vector
from .softsort import apply_ascending, soft_sort
from .forecast.checkpoint import load_checkpoint, save_checkpoint
from .forecast.config import ExperimentConfig, load_config, parse_config_text
from .forecast.data import load_csv, synth_dataset, write_csv
from .forecast.experiments import bench_runtime, bench_soft_rank, build_dataset, build_model, sweep_head_dim
from .forecast.training import evaluate, train, write_rows

log = logging.getLogger("xicorattn")

# shortcut flag -> config key
_SHORTCUTS = {
    "kernel": "kernel", "epochs": "epochs", "seed": "seed", "lookback": "lookback", "horizon": "horizon",
    "model_dim": "model_dim", "n_head": "n_head", "data": "data", "synth": "synth", "t_total": "t_total",
    "n_vars": "n_vars",
}


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--kernel", choices=("xicor", "dot_product"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lookback", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--model-dim", dest="model_dim", type=int)
    p.add_argument("--n-head", dest="n_head", type=int)
    p.add_argument("--data", help="CSV dataset (first column timestamp)")
    p.add_argument("--synth", help="synthetic dataset kind, used when --data is absent")
    p.add_argument("--t-total", dest="t_total", type=int)
    p.add_argument("--n-vars", dest="n_vars", type=int)


def experiment_config(args) -> ExperimentConfig:
    values = load_config(args.config) if args.config else {}
    if args.set:
        values.update(parse_config_text("\n".join(args.set), "--set"))
    for flag, key in _SHORTCUTS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if "synth" in values and getattr(args, "synth", None) is not None:
        values.pop("data", None)
    return ExperimentConfig.from_mapping(values)


def _write_matrix(path: Path, matrix: np.ndarray, row_label: str = "") -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([row_label, *range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            w.writerow([i, *(repr(float(v)) for v in row)])


def _load_table(args) -> tuple[np.ndarray, list[str]]:
    if args.csv:
        ds = load_csv(args.csv)
    else:
        ds = synth_dataset(args.synth, args.t_total, args.n_vars, args.seed)
    return ds.values, list(ds.variable_names)


# --- subcommands ---------------------------------------------------------------------------


def _column(names: list[str], key: str) -> int:
    if key in names:
        return names.index(key)
    if key.isdigit() and int(key) < len(names):
        return int(key)
    raise ConfigError(f"unknown column {key!r}; available: {', '.join(names)}")


def cmd_xi(args) -> int:
    values, names = _load_table(args)
    i, j = _column(names, args.x), _column(names, args.y)
    x, y = values[:, i], values[:, j]
    print(f"xi({names[i]} -> {names[j]}) = {xi_exact(x, y):.10g}")
    print(f"xi({names[j]} -> {names[i]}) = {xi_exact(y, x):.10g}")
    print(f"pearson = {pearson(x, y):.10g}")
    return 0


def cmd_corr_matrix(args) -> int:
    values, names = _load_table(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = ("pearson", "xi") if args.kind == "both" else (args.kind,)
    for kind in kinds:
        cm = correlation_matrix(values, kind, names)
        cm.to_csv(out / f"{kind}.csv")
        print(f"wrote {out / f'{kind}.csv'} ({len(names)}x{len(names)})")
        if cm.flagged:
            print(f"constant columns (NaN entries): {', '.join(cm.flagged)}")
    return 0


def cmd_sort(args) -> int:
    q = np.array(_floats(args.values))
    sp = soft_sort(Tensor(q), args.tau)
    print("descending argsort (1-based):", " ".join(str(int(i) + 1) for i in sp.hard))
    print("ascending sort:", " ".join(f"{v:.10g}" for v in apply_ascending(q, q, args.tau).data))
    print("soft matrix:")
    for row in sp.soft.data:
        print("  " + " ".join(f"{v:.6f}" for v in row))
    return 0


def cmd_rank(args) -> int:
    k = np.array(_floats(args.values))
    print("soft ranks:", " ".join(f"{v:.8g}" for v in soft_rank_vector(k, args.epsilon).values))
    print("exact descending ranks:", " ".join(f"{int(v)}" for v in exact_descending_ranks(k)))
    return 0


def cmd_grad_check(args) -> int:
    results = run_suite(seeds=tuple(range(args.seeds)))
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<24} rel_err={r.rel_error:.3e}  tol={r.tolerance:.0e}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args) -> int:
    cfg = experiment_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset.n_vars)
    res = train(model, dataset, cfg.patch, cfg.train, out_dir=out)
    log.info("kernel=%s rank_mode=%s fingerprint=%s", cfg.attention.kernel, cfg.attention.rank_mode, res.fingerprint)
    save_checkpoint(res.model, out / "model.ckpt")
    (out / "config.txt").write_text(cfg.to_text())
    rows = []
    for split in ("valid", "test"):
        rep = evaluate(res.model, dataset, split, batch_size=cfg.train.eval_batch_size)
        rows.append({**rep.row(), "kernel": cfg.attention.kernel, "rank_mode": cfg.attention.rank_mode,
                     "best_epoch": res.best_epoch})
    write_rows(rows, out / "metrics.csv")
    for r in rows:
        print(f"{r['split']}: mse={r['mse']:.6f} mae={r['mae']:.6f}")
    print(f"wrote {out}/model.ckpt, loss_curve.csv, metrics.csv")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = experiment_config(args)
    cfg = replace(cfg, attention=model.attn_cfg, patch=model.patch_cfg, model=model.model_cfg)
    dataset = build_dataset(cfg)
    rep = evaluate(model, dataset, args.split, raw_scale=args.raw_scale, batch_size=cfg.train.eval_batch_size)
    print(f"{rep.split}: mse={rep.mse:.6f} mae={rep.mae:.6f} windows={rep.n_windows}")
    if args.metrics_out:
        rows = [{"split": rep.split, "horizon": "all", "mae": rep.mae, "mse": rep.mse}]
        rows += [{"split": rep.split, "horizon": i + 1, "mae": a, "mse": m}
                 for i, (a, m) in enumerate(zip(rep.per_horizon_mae, rep.per_horizon_mse))]
        write_rows([{**r, "fingerprint": rep.fingerprint} for r in rows], args.metrics_out)
    if args.scores_out:
        out = Path(args.scores_out)
        out.mkdir(parents=True, exist_ok=True)
        x, _ = dataset.windows(args.split, model.patch_cfg.lookback, model.patch_cfg.horizon)
        with ag.no_grad():
            model(x[:1], keep_attention=True)
        # first window, first channel: one CSV pair per layer and head
        for layer, att in enumerate(model.last_attention):
            for h in range(att.scores.shape[1]):
                _write_matrix(out / f"scores_l{layer}_h{h}.csv", att.scores.data[0, h])
                _write_matrix(out / f"weights_l{layer}_h{h}.csv", att.weights.data[0, h])
        print(f"wrote score and weight matrices to {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = experiment_config(args)
    rows = sweep_head_dim(_ints(args.dims), cfg)
    write_rows(rows, args.out)
    for r in rows:
        print(f"d={r['head_dim']:<4} n_head={r['n_head']:<3} test_mse={r['test_mse']:.6f}")
    return 0


def cmd_bench(args) -> int:
    cfg = experiment_config(args)
    rows = bench_runtime(_ints(args.lookbacks), args.kernels.split(","), cfg, batch_size=args.batch_size,
                         n_vars=args.bench_vars, reps=args.reps)
    write_rows(rows, args.out)
    for r in rows:
        print(f"T={r['lookback']:<4} {r['kernel']:<12} {r['seconds_per_step']:.4f} s/step")
    if args.soft_rank_out:
        sr = bench_soft_rank(tuple(_ints(args.soft_rank_sizes)))
        write_rows(sr, args.soft_rank_out)
        for r in sr:
            print(f"soft_rank n={r['n']:<6} {r['seconds'] * 1e3:.3f} ms  ratio={r['ratio']:.3f}")
    return 0


def cmd_synth(args) -> int:
    ds = synth_dataset(args.kind, args.t_total, args.n_vars, args.seed)
    write_csv(ds, args.out)
    print(f"wrote {args.out}: {ds.values.shape[0]} rows x {ds.n_vars} variables")
    if "coupled_pairs" in ds.meta:
        print("coupled pairs:", ", ".join(f"{a}->{b}" for a, b in ds.meta["coupled_pairs"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xicorattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def table_source(p):
        p.add_argument("csv", nargs="?", help="CSV dataset; omit to use --synth")
        p.add_argument("--synth", default="monotone_coupled")
        p.add_argument("--t-total", dest="t_total", type=int, default=1000)
        p.add_argument("--n-vars", dest="n_vars", type=int, default=4)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("xi", help="xi and Pearson between two CSV columns")
    table_source(p)
    p.add_argument("--x", required=True, help="column name or 0-based index")
    p.add_argument("--y", required=True)
    p.set_defaults(fn=cmd_xi)

    p = sub.add_parser("corr-matrix", help="write CxC correlation matrices as CSV")
    table_source(p)
    p.add_argument("--kind", choices=("pearson", "xi", "both"), default="both")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_corr_matrix)

    p = sub.add_parser("sort", help="SoftSort of an inline vector")
    p.add_argument("values", help="comma or space separated numbers")
    p.add_argument("--tau", type=float, default=1.0)
    p.set_defaults(fn=cmd_sort)

    p = sub.add_parser("rank", help="soft ranks of an inline vector")
    p.add_argument("values")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite; nonzero exit on failure")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("train", help="train a forecaster")
    _add_config_args(p)
    p.add_argument("--out", default="runs/latest")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    _add_config_args(p)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--raw-scale", action="store_true")
    p.add_argument("--metrics-out")
    p.add_argument("--scores-out", help="directory for per-head score/weight CSVs")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="head-dimension sweep at fixed model_dim")
    _add_config_args(p)
    p.add_argument("--dims", default="32,64,128")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="seconds per training step by lookback and kernel")
    _add_config_args(p)
    p.add_argument("--lookbacks", default="48,96,192,336")
    p.add_argument("--kernels", default="dot_product,xicor")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--bench-vars", type=int, default=2)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--soft-rank-out", help="also time soft_rank scaling and write it here")
    p.add_argument("--soft-rank-sizes", default="1000,2000,4000,8000")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    p.add_argument("kind", choices=("sine_mix", "logistic_map", "monotone_coupled", "independent_noise"))
    p.add_argument("--t-total", dest="t_total", type=int, default=1000)
    p.add_argument("--n-vars", dest="n_vars", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (XicorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
