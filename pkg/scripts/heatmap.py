"""Dump attention scores of a checkpoint and print a coarse text heatmap per head.

    python3 scripts/heatmap.py runs/smoke/xicor/model.ckpt --config runs/smoke/xicor/config.txt
"""

import argparse
from pathlib import Path

import numpy as np

from xicorattn.cli import main

SHADES = " .:-=+*#%@"


def render(m):
    lo, hi = np.nanmin(m), np.nanmax(m)
    scaled = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
    idx = np.clip((scaled * (len(SHADES) - 1)).round().astype(int), 0, len(SHADES) - 1)
    return "\n".join("".join(SHADES[i] * 2 for i in row) for row in idx)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/scores")
    args = ap.parse_args()
    argv = ["eval", args.checkpoint, "--scores-out", args.out] + (["--config", args.config] if args.config else [])
    if main(argv):
        raise SystemExit(2)
    for path in sorted(Path(args.out).glob("scores_*.csv")):
        m = np.loadtxt(path, delimiter=",", skiprows=1)[:, 1:]
        print(f"{path.name}  range [{m.min():.3f}, {m.max():.3f}]")
        print(render(m))
