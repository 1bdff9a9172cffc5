"""End-to-end experiment plumbing shared by the CLI and the scripts.

A *run* simulates N vehicles crossing an intersection for ``steps`` frames,
pushes every state message through the uplink under a scenario schedule
(normal before ``onset``, attacked after), decodes at the RSU and, for
detection, filters both signals per vehicle with its coupled model.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import ChannelParams, Geometry, StateBounds, decode_frame, make_frame, transmit
from .core import (ContractError, Hypothesis, InsufficientDataError, ModelMismatchError,
                   SignalKind, rmse)
from .coupling import CoupledModel, learn_phi
from .detection import (AbnormalityTrace, DetectionReport, Thresholds, abnormality,
                        calibrate_thresholds, compute_report)
from .gdbn import GdbnParams, assign_clusters, generalized_errors, learn_gdbn, lift
from .gng import GngParams
from .inference import run_filter
from .trajectory import (DEFAULT_SPEED, DT_S, Trajectory, load_trajectories, spoof_offsets,
                         synthesize_maneuver)

SCENARIOS = ("normal", "jam", "spoof")
MODEL_FORMAT = "v2xdetect.models/1"
_ATTACK = {"normal": Hypothesis.H0, "jam": Hypothesis.H1, "spoof": Hypothesis.H2}


@dataclass(frozen=True)
class ExperimentConfig:
    vehicles: int = 2
    cluster_counts: tuple = (5, 25)
    particles: int = 100
    jammer_powers_dbm: tuple = (20.0, 25.0, 30.0, 35.0, 40.0)
    spoof_offset_m: tuple = (10.0, 0.0)
    spoof_ramp_steps: int | None = None  # None: ramp until the end of the run
    runs_per_scenario: int = 20
    seed: int = 0
    steps: int = 200
    onset: int | None = None  # None: mid-run
    train_runs: int = 8
    calibration_runs: int = 6
    noise_std_m: float = 0.02
    intersection_m: tuple = (150.0, 100.0)
    jammer_position_m: tuple = (40.0, 30.0)
    trajectory_csv: str | None = None
    window: int = 20
    quorum: int = 12
    tau_max: int = 20
    channel: ChannelParams = field(default_factory=ChannelParams)

    def __post_init__(self):
        for name in ("cluster_counts", "jammer_powers_dbm", "spoof_offset_m",
                     "intersection_m", "jammer_position_m"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if isinstance(self.channel, dict):
            object.__setattr__(self, "channel", ChannelParams(**self.channel))
        if not self.cluster_counts or not self.jammer_powers_dbm:
            raise ContractError("list fields must be nonempty")
        if self.runs_per_scenario < 1 or self.vehicles < 1:
            raise ContractError("runs_per_scenario and vehicles must be >= 1")
        if not 1 <= self.quorum <= self.window:
            raise ContractError("need 1 <= quorum <= window")

    @property
    def attack_onset(self) -> int:
        return self.steps // 2 if self.onset is None else self.onset

    @property
    def ramp_steps(self) -> int:
        if self.spoof_ramp_steps is None:
            return self.steps - self.attack_onset
        return self.spoof_ramp_steps

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labels (independent of PYTHONHASHSEED)."""
    blob = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


# scenario generation ---------------------------------------------------------

LATERAL_ACCEL_MS2 = (2.5, 3.5)
_KINDS = ("straight", "left_turn", "right_turn")
_HEADINGS = (0.0, 0.5 * math.pi, math.pi, -0.5 * math.pi)


def _synthetic_vehicle(config: ExperimentConfig, n: int, rng: np.random.Generator) -> Trajectory:
    kind = _KINDS[n % 3]
    heading = _HEADINGS[n % 4]
    speed = DEFAULT_SPEED * rng.uniform(0.9, 1.1)
    # radius from a comfortable lateral acceleration, v^2 / a
    v_ms = speed / DT_S
    radius = v_ms ** 2 / rng.uniform(*LATERAL_ACCEL_MS2)
    arc_steps = 0.5 * math.pi * radius / speed
    approach = int(round((config.steps - arc_steps) / 2)) + int(rng.integers(-5, 6))
    approach = max(approach, 0)
    c, s = math.cos(heading), math.sin(heading)
    lane = 2.0 + 3.5 * (n // 4)
    center = np.asarray(config.intersection_m)
    # enter the intersection box at the approach end
    along = np.array([c, s])
    right = np.array([s, -c])
    start = center - along * approach * speed + right * lane
    return synthesize_maneuver(kind, config.steps, speed, config.noise_std_m,
                               int(rng.integers(2 ** 31)), vehicle_id=n, start=start,
                               heading=heading, turn_radius=radius, approach_steps=approach)


def scene_trajectories(config: ExperimentConfig, seed: int) -> list[Trajectory]:
    rng = np.random.default_rng(seed)
    if config.trajectory_csv:
        base = load_trajectories(config.trajectory_csv)
        if len(base) < config.vehicles:
            raise InsufficientDataError(f"CSV has {len(base)} vehicles, config needs {config.vehicles}")
        out = []
        for tr in base[: config.vehicles]:
            if len(tr) < 10:
                raise InsufficientDataError(f"vehicle {tr.vehicle_id} has too few samples")
            pos = tr.positions + rng.normal(0.0, config.noise_std_m, tr.positions.shape)
            out.append(replace(tr, positions=pos))
        return out
    return [_synthetic_vehicle(config, n, rng) for n in range(config.vehicles)]


@dataclass
class VehicleRun:
    """Decoded observations of one vehicle over one run."""

    vehicle_id: int
    iq: np.ndarray  # (T, 2) mean equalized I/Q
    position: np.ndarray  # (T, 2) decoded
    velocity: np.ndarray  # (T, 2) decoded
    truth: list
    true_position: np.ndarray

    def rf_lifted(self) -> np.ndarray:
        return lift(self.iq)

    def gps_lifted(self) -> np.ndarray:
        return lift(self.position, self.velocity)


def simulate_run(config: ExperimentConfig, scenario: str, power_dbm: float, seed: int) -> list[VehicleRun]:
    """Simulate one run; every vehicle owns an independent RNG stream.

    The spoofer falsifies the GPS positions the vehicle reports; the velocity
    field comes from the vehicle's own odometry and stays truthful.
    """
    if scenario not in SCENARIOS:
        raise ContractError(f"unknown scenario {scenario!r}")
    trajectories = scene_trajectories(config, derive_seed(seed, "scene"))
    onset = config.attack_onset
    bounds = StateBounds(-config.channel.cell_radius_m, config.channel.cell_radius_m)
    attack = _ATTACK[scenario]
    runs = []
    for tr in trajectories:
        rng = np.random.default_rng(derive_seed(seed, "vehicle", tr.vehicle_id))
        T = len(tr)
        positions = tr.positions
        if attack is Hypothesis.H2:
            positions = positions + spoof_offsets(T, config.spoof_offset_m, onset, config.ramp_steps)
        truth = [Hypothesis.H0 if t < onset else attack for t in range(T)]
        iq = np.empty((T, 2))
        pos = np.empty((T, 2))
        vel = np.empty((T, 2))
        jammer = np.asarray(config.jammer_position_m, dtype=float)
        for t in range(T):
            p = np.clip(positions[t], bounds.pos_min, bounds.pos_max)
            v = np.clip(tr.velocities[t], bounds.vel_min, bounds.vel_max)
            frame = make_frame(tr.vehicle_id, t, p, v, bounds)
            geometry = Geometry(vehicle=tr.positions[t], jammer=jammer)
            hyp = truth[t]
            rx = transmit(frame, hyp, power_dbm, geometry, config.channel, rng)
            pos[t], vel[t], iq[t] = decode_frame(rx, rx.channel_gain, bounds)
        runs.append(VehicleRun(tr.vehicle_id, iq, pos, vel, truth, tr.positions))
    return runs


# training --------------------------------------------------------------------

@dataclass
class VehicleModel:
    vehicle_id: int
    coupled: CoupledModel
    thresholds: Thresholds

    def to_dict(self) -> dict:
        return {"vehicle_id": self.vehicle_id, "coupled": self.coupled.to_dict(),
                "thresholds": asdict(self.thresholds)}

    @classmethod
    def from_dict(cls, doc: dict) -> "VehicleModel":
        return cls(doc["vehicle_id"], CoupledModel.from_dict(doc["coupled"]),
                   Thresholds(**doc["thresholds"]))


@dataclass
class TrainedModels:
    clusters: int
    vehicles: list
    rmse_rf: float
    rmse_gps: float
    config_hash: str = ""
    seed: int = 0

    def to_json(self) -> str:
        doc = {"format": MODEL_FORMAT, "config_hash": self.config_hash, "seed": self.seed,
               "clusters": self.clusters, "rmse_rf": self.rmse_rf, "rmse_gps": self.rmse_gps,
               "vehicles": [v.to_dict() for v in self.vehicles]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainedModels":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise ContractError(f"unsupported model file format {doc.get('format')!r}")
        return cls(doc["clusters"], [VehicleModel.from_dict(v) for v in doc["vehicles"]],
                   doc["rmse_rf"], doc["rmse_gps"], doc["config_hash"], doc["seed"])

    @classmethod
    def load(cls, path) -> "TrainedModels":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def learn_coupled(rf_series, gps_series, n_clusters: int, params: GdbnParams, seed: int) -> CoupledModel:
    """Learn both GDBNs and their interactive matrix from aligned training runs.

    ``rf_series`` and ``gps_series`` are lists of lifted (T, 2d) arrays.
    """
    rf_values = [z[:, : z.shape[1] // 2] for z in rf_series]
    gps_values = [z[:, : z.shape[1] // 2] for z in gps_series]
    gps_derivs = [z[:, z.shape[1] // 2:] for z in gps_series]
    rf = learn_gdbn(rf_values, n_clusters, params, derive_seed(seed, "rf"), SignalKind.RF)
    gps = learn_gdbn(gps_values, n_clusters, params, derive_seed(seed, "gps"), SignalKind.GPS,
                     derivatives=gps_derivs)
    rf_labels = np.concatenate([assign_clusters(generalized_errors(z), rf.clusters) for z in rf_series])
    gps_labels = np.concatenate([assign_clusters(generalized_errors(z), gps.clusters) for z in gps_series])
    phi = learn_phi(rf_labels, gps_labels, rf.n_clusters, gps.n_clusters)
    return CoupledModel(rf, gps, phi)


def _gdbn_params(config: ExperimentConfig) -> GdbnParams:
    return GdbnParams(tau_max=config.tau_max, gng=GngParams())


def filter_vehicle(model: CoupledModel, run: VehicleRun, particles: int, seed: int):
    """Run the filter on one vehicle; returns (upsilons (T-1, 2), records)."""
    records = run_filter(model, run.rf_lifted(), run.gps_lifted(), particles, seed)
    ups = np.array([[abnormality(r.rf_predictive, r.rf_diagnostic),
                     abnormality(r.gps_predictive, r.gps_diagnostic)] for r in records])
    return ups, records


def train_models(config: ExperimentConfig, n_clusters: int) -> TrainedModels:
    """Learn per-vehicle coupled models on normal runs and calibrate
    thresholds on separate normal runs."""
    params = _gdbn_params(config)
    train = [simulate_run(config, "normal", 0.0, derive_seed(config.seed, "train", k))
             for k in range(config.train_runs)]
    calib = [simulate_run(config, "normal", 0.0, derive_seed(config.seed, "calib", k))
             for k in range(config.calibration_runs)]
    vehicles = []
    rf_pred, rf_obs, gps_pred, gps_obs = [], [], [], []
    for n in range(config.vehicles):
        coupled = learn_coupled([r[n].rf_lifted() for r in train], [r[n].gps_lifted() for r in train],
                                n_clusters, params, derive_seed(config.seed, "learn", n, n_clusters))
        ups = []
        for k, run in enumerate(calib):
            u, records = filter_vehicle(coupled, run[n], config.particles,
                                        derive_seed(config.seed, "calib-filter", n, n_clusters, k))
            ups.append(u)
            rf_pred += [r.rf_point for r in records]
            rf_obs += [r.rf_observed for r in records]
            gps_pred += [r.gps_point for r in records]
            gps_obs += [r.gps_observed for r in records]
        vehicles.append(VehicleModel(n, coupled, calibrate_thresholds(np.vstack(ups))))
    return TrainedModels(n_clusters, vehicles, rmse(rf_pred, rf_obs), rmse(gps_pred, gps_obs),
                         config.config_hash(), config.seed)


# detection -------------------------------------------------------------------

@dataclass
class RunResult:
    traces: list
    rf_pred: list
    rf_obs: list
    gps_pred: list
    gps_obs: list


def detect_run(models: TrainedModels, config: ExperimentConfig, scenario: str, power_dbm: float,
               seed: int) -> RunResult:
    if len(models.vehicles) != config.vehicles:
        raise ModelMismatchError("model file does not match the configured vehicle count")
    runs = simulate_run(config, scenario, power_dbm, seed)
    out = RunResult([], [], [], [], [])
    for vm, run in zip(models.vehicles, runs):
        ups, records = filter_vehicle(vm.coupled, run, config.particles,
                                      derive_seed(seed, "filter", vm.vehicle_id))
        truth = run.truth[1:]
        out.traces.append(AbnormalityTrace.build(ups, vm.thresholds, truth, [r.t for r in records]))
        for r, h in zip(records, truth):
            if h is Hypothesis.H0:
                out.rf_pred.append(r.rf_point)
                out.rf_obs.append(r.rf_observed)
                out.gps_pred.append(r.gps_point)
                out.gps_obs.append(r.gps_observed)
    return out


def evaluate(models: TrainedModels, config: ExperimentConfig, scenario: str, power_dbm: float,
             seeds) -> tuple[DetectionReport, list]:
    results = [detect_run(models, config, scenario, power_dbm, s) for s in seeds]
    return report_from_results(results, config, {"scenario": scenario, "power_dbm": power_dbm,
                                                 "clusters": models.clusters})


def report_from_results(results, config: ExperimentConfig, echo: dict) -> tuple[DetectionReport, list]:
    traces = [t for r in results for t in r.traces]
    rf_p = [p for r in results for p in r.rf_pred]
    rf_o = [p for r in results for p in r.rf_obs]
    gps_p = [p for r in results for p in r.gps_pred]
    gps_o = [p for r in results for p in r.gps_obs]
    report = compute_report(traces, config.window, config.quorum,
                            rmse(rf_p, rf_o) if rf_p else None,
                            rmse(gps_p, gps_o) if gps_p else None,
                            {**echo, "config_hash": config.config_hash(), "seed": config.seed})
    return report, traces


def run_seed(config: ExperimentConfig, scenario: str, power_dbm: float, clusters: int, run: int) -> int:
    return derive_seed(config.seed, scenario, float(power_dbm), clusters, run)
