"""Run a multi-seed trend protocol and write selected rows plus a median table.

    python scripts/run_trends.py stereotyping --out results/stereotyping
    python scripts/run_trends.py imbalance --seeds 0 1 2 3 4 5 6 7 8 9 --out results/imbalance
"""

import argparse
import sys
from pathlib import Path

from fairldam.experiment import emit_table, write_rows
from fairldam.protocols import imbalance_protocol, medians, run_protocol, stereotyping_protocol

PROTOCOLS = {"stereotyping": stereotyping_protocol, "imbalance": imbalance_protocol}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("protocol", choices=sorted(PROTOCOLS))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    rows = run_protocol(PROTOCOLS[args.protocol](args.seeds), log=log)
    write_rows(rows, args.out / "selected_rows.csv")
    emit_table(rows, args.out / "table.csv")
    for (setting, method), (f, fair) in sorted(medians(rows).items()):
        print(f"{setting:14s} {method:10s} F={f:.3f} 1-GAP={fair:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
