"""Per-step runtime by lookback for both kernels, plus soft_rank scaling."""

import argparse

from xicorattn.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--lookbacks", default="48,96,192,336")
    ap.add_argument("--out", default="runs/bench.csv")
    ap.add_argument("--soft-rank-out", default="runs/bench_soft_rank.csv")
    args = ap.parse_args()
    raise SystemExit(main(["bench", "--lookbacks", args.lookbacks, "--out", args.out,
                           "--soft-rank-out", args.soft_rank_out]))
