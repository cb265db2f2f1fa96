"""Run one or more sweep configs and print their summary tables.

    python scripts/run_sweeps.py scripts/configs/fig_case14.yaml scripts/configs/zone_sweep.yaml
"""

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from dpps.experiments import load_config, run_experiment


def show(path: Path) -> None:
    rows = list(csv.reader(open(path, encoding="utf-8")))
    widths = [max(len(r[i]) if i < len(r) else 0 for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c[:12].ljust(min(w, 12)) for c, w in zip(r, widths)))


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--out-root", default=None, help="prefix for every config's out_dir")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    failed = 0
    for c in args.configs:
        cfg = load_config(c)
        if args.out_root:
            cfg = replace(cfg, out_dir=str(Path(args.out_root) / Path(cfg.out_dir).name))
        out = run_experiment(cfg)
        print(f"\n== {c} -> {out}")
        show(out / "summary.csv")
        failed += sum(1 for _ in open(out / "failures.csv")) - 1
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
