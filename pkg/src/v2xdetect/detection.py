"""Abnormality indicators, 3-sigma thresholds, the ternary decision rule and
scenario-level detection metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ContractError, Gaussian, InsufficientDataError, Hypothesis, gaussian_bhattacharyya, moment_match

BC_FLOOR = 1e-300
MIN_CALIBRATION_STEPS = 100


def _collapse(density) -> Gaussian:
    if isinstance(density, Gaussian):
        return density
    if hasattr(density, "collapse"):
        return density.collapse()
    weights, gaussians = density
    return moment_match(weights, gaussians)


def abnormality(predictive, diagnostic) -> float:
    """-ln of the Bhattacharyya coefficient between two (mixture) densities.

    Mixtures, given as objects with ``collapse()`` or ``(weights, gaussians)``
    pairs, are moment matched to single Gaussians first.
    """
    bc = gaussian_bhattacharyya(_collapse(predictive), _collapse(diagnostic))
    return float(-np.log(max(bc, BC_FLOOR)))


@dataclass(frozen=True)
class Thresholds:
    xi1: float
    xi2: float
    train_mean1: float
    train_std1: float
    train_mean2: float
    train_std2: float


def calibrate_thresholds(normal_steps) -> Thresholds:
    """xi = mean + 3 std per channel over pooled normal (upsilon_rf, upsilon_gps) steps."""
    arr = np.asarray(normal_steps, dtype=float).reshape(-1, 2)
    if len(arr) < MIN_CALIBRATION_STEPS:
        raise InsufficientDataError(f"need at least {MIN_CALIBRATION_STEPS} calibration steps, got {len(arr)}")
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    xi = mean + 3.0 * std
    return Thresholds(float(xi[0]), float(xi[1]), float(mean[0]), float(std[0]),
                      float(mean[1]), float(std[1]))


def classify_step(upsilon_rf: float, upsilon_gps: float, thresholds: Thresholds) -> Hypothesis:
    rf_abn = upsilon_rf >= thresholds.xi1
    gps_abn = upsilon_gps >= thresholds.xi2
    if not rf_abn and not gps_abn:
        return Hypothesis.H0
    if rf_abn and gps_abn:
        return Hypothesis.H1
    if gps_abn:
        return Hypothesis.H2
    return Hypothesis.INDETERMINATE


def windowed_decision(step_decisions: Sequence, window: int = 20, quorum: int = 12) -> list[Hypothesis]:
    """Sliding (stride 1) quorum vote; a window is H1/H2 when at least
    ``quorum`` of its steps say so, otherwise H0."""
    if window < 1 or not 1 <= quorum <= window:
        raise ContractError("need window >= 1 and 1 <= quorum <= window")
    steps = [Hypothesis(s) for s in step_decisions]
    n = len(steps)
    if n < window:
        return []
    h1 = np.array([s is Hypothesis.H1 for s in steps], dtype=int)
    h2 = np.array([s is Hypothesis.H2 for s in steps], dtype=int)
    kernel = np.ones(window, dtype=int)
    c1 = np.convolve(h1, kernel, mode="valid")
    c2 = np.convolve(h2, kernel, mode="valid")
    out = []
    for a, b in zip(c1, c2):
        if a >= quorum and a >= b:
            out.append(Hypothesis.H1)
        elif b >= quorum:
            out.append(Hypothesis.H2)
        else:
            out.append(Hypothesis.H0)
    return out


def window_truth(truth: Sequence, window: int) -> list:
    """Label of each sliding window if all its steps agree, else None."""
    out = []
    for k in range(len(truth) - window + 1):
        labels = set(truth[k:k + window])
        out.append(Hypothesis(labels.pop()) if len(labels) == 1 else None)
    return out


@dataclass
class TraceStep:
    t: int
    upsilon_rf: float
    upsilon_gps: float
    decided: Hypothesis
    truth: Hypothesis | None = None


@dataclass
class AbnormalityTrace:
    steps: list = field(default_factory=list)
    xi1: float = float("nan")
    xi2: float = float("nan")

    @classmethod
    def build(cls, upsilons, thresholds: Thresholds, truth=None, times=None) -> "AbnormalityTrace":
        upsilons = np.asarray(upsilons, dtype=float).reshape(-1, 2)
        times = range(len(upsilons)) if times is None else times
        truth = [None] * len(upsilons) if truth is None else [Hypothesis(h) for h in truth]
        steps = [TraceStep(int(t), float(u[0]), float(u[1]), classify_step(u[0], u[1], thresholds), h)
                 for t, u, h in zip(times, upsilons, truth)]
        return cls(steps, thresholds.xi1, thresholds.xi2)

    @property
    def decisions(self) -> list:
        return [s.decided for s in self.steps]

    @property
    def truth(self) -> list:
        return [s.truth for s in self.steps]

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "upsilon_rf", "upsilon_gps", "decided", "truth"])
            for s in self.steps:
                w.writerow([s.t, repr(s.upsilon_rf), repr(s.upsilon_gps), s.decided.value,
                            "" if s.truth is None else s.truth.value])

    @classmethod
    def read_csv(cls, path) -> "AbnormalityTrace":
        with open(Path(path), encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        steps = []
        for rec in csv.DictReader(lines):
            steps.append(TraceStep(int(rec["t"]), float(rec["upsilon_rf"]), float(rec["upsilon_gps"]),
                                   Hypothesis(rec["decided"]),
                                   Hypothesis(rec["truth"]) if rec["truth"] else None))
        return cls(steps)


@dataclass
class DetectionReport:
    pd_jammer: float | None
    pd_spoofer: float | None
    pf_spoofer: float | None
    pf_jammer: float | None
    rmse_rf: float | None = None
    rmse_gps: float | None = None
    window_counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _fraction(hits: int, total: int) -> float | None:
    return None if total == 0 else hits / total


def compute_report(traces: Iterable[AbnormalityTrace], window: int = 20, quorum: int = 12,
                   rmse_rf: float | None = None, rmse_gps: float | None = None,
                   config: dict | None = None) -> DetectionReport:
    """Window-level Pd/Pf pooled over labeled traces.

    Only windows whose steps share one ground-truth label are scored.
    Probabilities for classes without scored windows are ``None``.
    """
    counts = {h.value: {d.value: 0 for d in (Hypothesis.H0, Hypothesis.H1, Hypothesis.H2)}
              for h in (Hypothesis.H0, Hypothesis.H1, Hypothesis.H2)}
    for trace in traces:
        truth = trace.truth
        if any(t is None for t in truth):
            raise ContractError("every step needs a ground-truth label")
        for dec, tru in zip(windowed_decision(trace.decisions, window, quorum), window_truth(truth, window)):
            if tru is not None:
                counts[tru.value][dec.value] += 1
    n0 = sum(counts["H0"].values())
    n1 = sum(counts["H1"].values())
    n2 = sum(counts["H2"].values())
    return DetectionReport(
        pd_jammer=_fraction(counts["H1"]["H1"], n1),
        pd_spoofer=_fraction(counts["H2"]["H2"], n2),
        pf_spoofer=_fraction(counts["H0"]["H2"], n0),
        pf_jammer=_fraction(counts["H0"]["H1"], n0),
        rmse_rf=rmse_rf, rmse_gps=rmse_gps, window_counts=counts, config=config or {})
