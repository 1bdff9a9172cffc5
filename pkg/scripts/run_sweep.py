"""Full Monte-Carlo sweep, then per-cell detection curves averaged over runs.

    python scripts/run_sweep.py --out out/sweep --threads 4
"""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from v2xdetect.cli import cmd_sweep, load_config


def summarize(path: Path) -> None:
    cells = defaultdict(lambda: defaultdict(list))
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            key = (row["scenario"], int(row["clusters"]), float(row["power_dbm"]))
            for metric in ("pd_jam", "pd_spoof", "pf_jam", "pf_spoof", "rmse_gps"):
                if row[metric]:
                    cells[key][metric].append(float(row[metric]))
    print(f"{'scenario':8} {'M':>3} {'dBm':>5}  " + "  ".join(f"{m:>8}" for m in
          ("pd_jam", "pd_spoof", "pf_jam", "pf_spoof", "rmse_gps")))
    for key in sorted(cells):
        vals = [np.mean(cells[key][m]) if cells[key][m] else float("nan")
                for m in ("pd_jam", "pd_spoof", "pf_jam", "pf_spoof", "rmse_gps")]
        print(f"{key[0]:8} {key[1]:>3} {key[2]:>5g}  " + "  ".join(f"{v:8.3f}" for v in vals))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("out/sweep"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    config = load_config(args.config, args.seed)
    summarize(cmd_sweep(config, args.out, threads=args.threads))


if __name__ == "__main__":
    main()
