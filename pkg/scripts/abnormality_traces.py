"""Dump per-step abnormality signals of a single run for every scenario.

Writes one CSV per scenario and vehicle next to the printed threshold
crossing rates before and after the attack onset. Useful for plotting the
RF and GPS indicators against their thresholds.
"""
import argparse
from pathlib import Path

import numpy as np

from v2xdetect.cli import load_config
from v2xdetect.experiment import SCENARIOS, detect_run, run_seed, train_models


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--clusters", type=int, default=5)
    ap.add_argument("--power", type=float, default=30.0)
    ap.add_argument("--out", type=Path, default=Path("out/traces"))
    args = ap.parse_args()
    config = load_config(args.config, args.seed)
    models = train_models(config, args.clusters)
    args.out.mkdir(parents=True, exist_ok=True)
    onset = config.attack_onset
    for scenario in SCENARIOS:
        power = args.power if scenario == "jam" else 0.0
        res = detect_run(models, config, scenario, power, run_seed(config, scenario, power, args.clusters, 0))
        for n, trace in enumerate(res.traces):
            trace.write_csv(args.out / f"{scenario}_veh{n}.csv", {"scenario": scenario, "vehicle": n})
            u = np.array([[s.upsilon_rf, s.upsilon_gps] for s in trace.steps])
            pre = (u[:onset] >= [trace.xi1, trace.xi2]).mean(axis=0)
            post = (u[onset:] >= [trace.xi1, trace.xi2]).mean(axis=0)
            print(f"{scenario:6} veh{n}  xi=({trace.xi1:.3f}, {trace.xi2:.3f})  "
                  f"above threshold rf/gps: before {pre.round(3)} after {post.round(3)}")


if __name__ == "__main__":
    main()
