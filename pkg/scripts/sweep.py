"""Test MSE as a function of head dimension at D=128 (softer xi estimates at small d)."""

import argparse

from xicorattn.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--dims", default="32,64,128")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--kernel", default="xicor")
    ap.add_argument("--out", default="runs/sweep.csv")
    args = ap.parse_args()
    raise SystemExit(main(["sweep", "--dims", args.dims, "--epochs", str(args.epochs), "--kernel", args.kernel,
                           "--model-dim", "128", "--out", args.out]))
