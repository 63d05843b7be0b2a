"""Sweep every method on the named ratio settings and write per-method Pareto frontiers.

    python scripts/run_frontiers.py --settings original 90-90 95-95 --points 5 --out results/frontiers

Each (setting, method) pair gets ``rows_<setting>_<method>.csv`` and
``frontier_<setting>_<method>.csv`` (test-set F-score vs 1-GAP).
"""

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from fairldam.experiment import ExperimentConfig, InlpSettings, SweepGrid, emit_frontier, run_sweep, write_rows
from fairldam.losses import LossSpec

METHODS = {
    "VANILLA": (LossSpec("VANILLA"), False),
    "CW": (LossSpec("CW"), False),
    "IW": (LossSpec("IW"), False),
    "FOCAL": (LossSpec("FOCAL"), False),
    "LDAM": (LossSpec("LDAM"), False),
    "LDAM_CW": (LossSpec("LDAM_CW"), False),
    "LDAM_IW": (LossSpec("LDAM_IW"), False),
    "LDAM_ADV": (LossSpec("LDAM_ADV"), False),
    "LDAM_REG": (LossSpec("LDAM_REG"), False),
    "INLP": (LossSpec("VANILLA"), True),
}


def log_axis(lo, hi, n):
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), n))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--settings", nargs="+", default=["original", "90-90", "95-95"])
    ap.add_argument("--methods", nargs="+", choices=sorted(METHODS), default=sorted(METHODS))
    ap.add_argument("--points", type=int, default=10, help="grid points per hyperparameter axis")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    grid = SweepGrid(
        C=log_axis(1e-2, 30.0, args.points),
        rho=log_axis(1e-4, 1e2, args.points),
        lambda_adv=log_axis(1e-4, 1e2, args.points),
        inlp_iters=tuple(range(1, args.points + 1)),
    )
    args.out.mkdir(parents=True, exist_ok=True)
    for setting in args.settings:
        for name in args.methods:
            loss, use_inlp = METHODS[name]
            base = ExperimentConfig(setting=setting, seed=args.seed, loss=loss, inlp=InlpSettings(enabled=use_inlp))
            rows = run_sweep(replace(grid, settings=(setting,)), base, jobs=args.jobs)
            stem = f"{setting}_{name}"
            write_rows(rows, args.out / f"rows_{stem}.csv")
            front = emit_frontier(rows, args.out / f"frontier_{stem}.csv")
            print(f"{setting:9s} {name:9s} {len(rows):4d} rows, {len(front)} on frontier", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
