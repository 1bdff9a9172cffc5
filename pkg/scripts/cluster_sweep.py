"""Prediction RMSE on held-out normal data as the cluster budget M grows."""
import argparse
from dataclasses import replace
from pathlib import Path

from v2xdetect.cli import load_config
from v2xdetect.experiment import train_models


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--clusters", type=int, nargs="+", default=[3, 5, 10, 15, 25])
    args = ap.parse_args()
    config = load_config(args.config, args.seed)
    config = replace(config, cluster_counts=tuple(args.clusters))
    print(f"{'M':>4} {'rmse_rf':>10} {'rmse_gps':>10}  rf/gps clusters per vehicle")
    for m in args.clusters:
        models = train_models(config, m)
        sizes = [(v.coupled.rf.n_clusters, v.coupled.gps.n_clusters) for v in models.vehicles]
        print(f"{m:>4} {models.rmse_rf:10.5f} {models.rmse_gps:10.5f}  {sizes}")


if __name__ == "__main__":
    main()
