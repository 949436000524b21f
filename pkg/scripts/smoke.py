"""Desk-scale training run on the coupled logistic maps with both kernels.

    python3 scripts/smoke.py --out runs/smoke --epochs 20
"""

import argparse
import csv
from pathlib import Path

from xicorattn.cli import main


def best_val(run_dir):
    with open(run_dir / "loss_curve.csv", newline="") as fh:
        curve = list(csv.DictReader(fh))
    return float(curve[0]["val_mse"]), min(float(r["val_mse"]) for r in curve[1:] or curve)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/smoke")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    for kernel in ("xicor", "dot_product"):
        run = out / kernel
        code = main(["train", "--kernel", kernel, "--epochs", str(args.epochs), "--seed", str(args.seed),
                     "--synth", "logistic_map", "--n-vars", "4", "--set", "patience=" + str(max(args.epochs, 1)),
                     "--out", str(run)])
        if code:
            raise SystemExit(code)
        start, best = best_val(run)
        print(f"{kernel:12s} epoch-0 val_mse {start:.4f}  best {best:.4f}  ratio {best / start:.3f}")
