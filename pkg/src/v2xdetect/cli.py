"""Command line entry point: ``v2xdetect train | detect | sweep``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .core import ContractError, InsufficientDataError, ModelMismatchError
from .experiment import (SCENARIOS, ExperimentConfig, TrainedModels, detect_run,
                         report_from_results, run_seed, train_models)
from .trajectory import DataError, SchemaError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DATA = 3
EXIT_MISMATCH = 4

SWEEP_COLUMNS = ("scenario", "power_dbm", "clusters", "run", "pd_jam", "pd_spoof",
                 "pf_jam", "pf_spoof", "rmse_rf", "rmse_gps")


class InputError(Exception):
    pass


def model_path(out: Path, clusters: int) -> Path:
    return out / f"models_M{clusters}.json"


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def load_config(path, seed: int | None) -> ExperimentConfig:
    if path is None:
        config = ExperimentConfig()
    else:
        try:
            config = ExperimentConfig.from_json(path)
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        except (json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"malformed config {path}: {exc}") from exc
    if seed is not None:
        config = replace(config, seed=seed)
    if config.trajectory_csv and not Path(config.trajectory_csv).is_file():
        raise InputError(f"trajectory source {config.trajectory_csv} not found")
    return config


def _header(config: ExperimentConfig) -> dict:
    return {"config_hash": config.config_hash(), "seed": config.seed}


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _pool_map(fn, jobs: list, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# train -------------------------------------------------------------------------

def _train_one(config_doc: dict, clusters: int) -> str:
    return train_models(ExperimentConfig.from_dict(config_doc), clusters).to_json()


def cmd_train(config: ExperimentConfig, out: Path, threads: int = 1, cluster_counts=None) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    doc = config.to_dict()
    counts = config.cluster_counts if cluster_counts is None else tuple(cluster_counts)
    texts = _pool_map(_train_one, [(doc, m) for m in counts], threads)
    paths = []
    for m, text in zip(counts, texts):
        path = model_path(out, m)
        path.write_text(text, encoding="utf-8", newline="\n")
        models = TrainedModels.from_json(text)
        rf = [v.coupled.rf.n_clusters for v in models.vehicles]
        gps = [v.coupled.gps.n_clusters for v in models.vehicles]
        print(f"M={m} rf_clusters={rf} gps_clusters={gps} "
              f"rmse_rf={models.rmse_rf:.6g} rmse_gps={models.rmse_gps:.6g} -> {path}")
        paths.append(path)
    return paths


# detect ------------------------------------------------------------------------

def load_models(path: Path, config: ExperimentConfig, clusters: int | None = None) -> TrainedModels:
    try:
        models = TrainedModels.load(path)
    except OSError as exc:
        raise InputError(f"cannot read model file {path}: {exc}; run `train` first") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"malformed model file {path}: {exc}") from exc
    if clusters is not None and models.clusters != clusters:
        raise ModelMismatchError(f"{path} holds M={models.clusters}, expected M={clusters}")
    if models.clusters not in config.cluster_counts:
        raise ModelMismatchError(f"{path} holds M={models.clusters}, config has {list(config.cluster_counts)}")
    if len(models.vehicles) != config.vehicles:
        raise ModelMismatchError(f"{path} has {len(models.vehicles)} vehicles, config has {config.vehicles}")
    if models.config_hash != config.config_hash():
        print(f"warning: {path} was trained with config {models.config_hash}", file=sys.stderr)
    return models


def default_power(config: ExperimentConfig, scenario: str) -> float:
    return max(config.jammer_powers_dbm) if scenario == "jam" else 0.0


def cmd_detect(config: ExperimentConfig, out: Path, scenario: str, model_files=None,
               power_dbm: float | None = None) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    power = default_power(config, scenario) if power_dbm is None else power_dbm
    if model_files:
        all_models = [load_models(Path(p), config) for p in model_files]
    else:
        all_models = [load_models(model_path(out, m), config, m) for m in config.cluster_counts]
    header = _header(config)
    reports = []
    for models in all_models:
        target = out / f"detect_{scenario}_M{models.clusters}"
        target.mkdir(exist_ok=True)
        results = []
        for r in range(config.runs_per_scenario):
            res = detect_run(models, config, scenario, power,
                             run_seed(config, scenario, power, models.clusters, r))
            for n, trace in enumerate(res.traces):
                trace.write_csv(target / f"trace_run{r:03d}_veh{n}.csv",
                                {**header, "scenario": scenario, "power_dbm": power,
                                 "clusters": models.clusters, "run": r, "vehicle": n})
            results.append(res)
        report, _ = report_from_results(results, config, {"scenario": scenario, "power_dbm": power,
                                                           "clusters": models.clusters})
        path = target / "report.json"
        path.write_text(report.to_json(), encoding="utf-8", newline="\n")
        print(f"M={models.clusters} {scenario} power={power:g}dBm pd_jam={_fmt(report.pd_jammer)} "
              f"pd_spoof={_fmt(report.pd_spoofer)} pf_jam={_fmt(report.pf_jammer)} "
              f"pf_spoof={_fmt(report.pf_spoofer)} -> {path}")
        reports.append(path)
    return reports


# sweep -------------------------------------------------------------------------

_MODEL_CACHE: dict = {}


def _sweep_cell(config_doc: dict, path: str, scenario: str, power: float, clusters: int,
                run: int) -> list[str]:
    config = ExperimentConfig.from_dict(config_doc)
    st = Path(path).stat()
    key = (path, st.st_mtime_ns, st.st_size)
    models = _MODEL_CACHE.get(key)
    if models is None:
        models = _MODEL_CACHE.setdefault(key, TrainedModels.load(path))
    res = detect_run(models, config, scenario, power, run_seed(config, scenario, power, clusters, run))
    rep, _ = report_from_results([res], config, {})
    return [scenario, repr(float(power)), str(clusters), str(run), _fmt(rep.pd_jammer),
            _fmt(rep.pd_spoofer), _fmt(rep.pf_jammer), _fmt(rep.pf_spoofer),
            _fmt(rep.rmse_rf), _fmt(rep.rmse_gps)]


def cmd_sweep(config: ExperimentConfig, out: Path, scenarios=SCENARIOS, threads: int = 1) -> Path:
    """Every scenario x power x cluster count x run, one CSV row per cell.

    Model files missing from ``out`` are trained first.
    """
    out.mkdir(parents=True, exist_ok=True)
    missing = [m for m in config.cluster_counts if not model_path(out, m).is_file()]
    if missing:
        cmd_train(config, out, threads, missing)
    for m in config.cluster_counts:
        load_models(model_path(out, m), config, m)
    doc = config.to_dict()
    jobs = [(doc, str(model_path(out, m)), s, float(p), m, r)
            for s in scenarios for p in config.jammer_powers_dbm
            for m in config.cluster_counts for r in range(config.runs_per_scenario)]
    rows = _pool_map(_sweep_cell, jobs, threads)
    path = out / "sweep.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in _header(config).items():
            fh.write(f"# {k}={v}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)
    print(f"{len(rows)} rows -> {path}")
    return path


# entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2xdetect",
                                     description="Joint jamming and GPS spoofing detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "detect", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment configuration")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=_seed, help="base seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        if name != "train":
            p.add_argument("--scenario", choices=SCENARIOS, required=name == "detect",
                           help="scenario (sweep: restrict to one)")
        if name == "detect":
            p.add_argument("--models", type=Path, nargs="+", help="model files (default: OUT/models_M*.json)")
            p.add_argument("--power", type=float, help="jammer power in dBm (default: highest configured)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.seed)
        if args.command == "train":
            cmd_train(config, args.out, args.threads)
        elif args.command == "detect":
            cmd_detect(config, args.out, args.scenario, args.models, args.power)
        else:
            scenarios = (args.scenario,) if args.scenario else SCENARIOS
            cmd_sweep(config, args.out, scenarios, args.threads)
    except ModelMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except InsufficientDataError as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InputError, SchemaError, DataError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
