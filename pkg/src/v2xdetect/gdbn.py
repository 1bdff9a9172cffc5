"""Learning one generalized dynamic Bayesian network per signal.

Pipeline: lift observations to generalized coordinates, predict each step
with the null-force (constant-velocity) model, take generalized errors,
quantize them with GNG into Gaussian clusters, and count dwell-time
conditioned cluster transitions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (Cluster, ClusterSet, ContractError, Gaussian, GeneralizedState,
                   InsufficientDataError, SignalKind, StochasticMatrix, regularize, row_normalize)
from .gng import GngParams, GrowingNeuralGas

FORMAT = "v2xdetect.gdbn/1"


@dataclass(frozen=True)
class GdbnParams:
    tau_max: int = 20
    gng: GngParams = field(default_factory=GngParams)
    # share of the post-fit residual covariance attributed to the sensor
    measurement_share: float = 0.5


@dataclass(frozen=True)
class TransitionModel:
    """Dwell-conditioned matrices ``matrices[tau - 1]`` plus a dwell-agnostic fallback.

    ``bucket_counts[tau - 1, j]`` is how many training transitions left
    cluster ``j`` after ``tau`` steps in it.
    """

    matrices: tuple
    fallback: StochasticMatrix
    bucket_counts: np.ndarray = field(repr=False)

    @property
    def tau_max(self) -> int:
        return len(self.matrices)

    def row(self, j: int, tau: int, min_count: int = 5) -> np.ndarray:
        k = min(max(tau, 1), self.tau_max) - 1
        if self.bucket_counts[k, j] < min_count:
            return self.fallback.row(j)
        return self.matrices[k].row(j)


def constant_velocity_matrix(d: int) -> np.ndarray:
    eye = np.eye(d)
    return np.block([[eye, eye], [np.zeros((d, d)), eye]])


def lift(observations, derivatives=None) -> np.ndarray:
    """(T, d) observations -> (T, 2d) generalized observations.

    Without explicit derivatives the backward first difference is used,
    zero at the first sample.
    """
    z = np.asarray(observations, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if derivatives is None:
        dz = np.zeros_like(z)
        dz[1:] = np.diff(z, axis=0)
    else:
        dz = np.asarray(derivatives, dtype=float).reshape(z.shape)
    return np.hstack([z, dz])


@dataclass(frozen=True)
class GdbnModel:
    kind: SignalKind
    clusters: ClusterSet
    transition: TransitionModel
    process_noise_std: float
    measurement_noise_std: float
    measurement_cov: np.ndarray = field(repr=False)
    seed: int = 0
    params: GdbnParams = field(default_factory=GdbnParams)

    def __post_init__(self):
        m = len(self.clusters)
        if self.transition.fallback.shape != (m, m):
            raise ContractError("transition matrices do not match the cluster count")

    @property
    def dim(self) -> int:
        return self.clusters[0].gaussian.dim // 2

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def A(self) -> np.ndarray:
        return constant_velocity_matrix(self.dim)

    @property
    def B(self) -> np.ndarray:
        return np.eye(2 * self.dim)

    @property
    def H(self) -> np.ndarray:
        return np.eye(2 * self.dim)

    def control(self, m: int) -> np.ndarray:
        return self.clusters[m].gaussian.mean

    def process_cov(self, m: int) -> np.ndarray:
        share = 1.0 - self.params.measurement_share
        q = share * self.clusters[m].gaussian.cov
        return regularize(q) + (self.process_noise_std ** 2) * np.eye(2 * self.dim)

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        tr = self.transition
        return {
            "format": FORMAT,
            "kind": self.kind.value,
            "seed": int(self.seed),
            "params": {
                "tau_max": self.params.tau_max,
                "measurement_share": self.params.measurement_share,
                "gng": vars(self.params.gng),
            },
            "process_noise_std": self.process_noise_std,
            "measurement_noise_std": self.measurement_noise_std,
            "measurement_cov": self.measurement_cov.tolist(),
            "clusters": [
                {"id": c.id, "mean": c.gaussian.mean.tolist(), "cov": c.gaussian.cov.tolist(),
                 "member_count": c.member_count}
                for c in self.clusters
            ],
            "transition": {
                "fallback": tr.fallback.entries.tolist(),
                "matrices": [m.entries.tolist() for m in tr.matrices],
                "bucket_counts": tr.bucket_counts.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GdbnModel":
        if doc.get("format") != FORMAT:
            raise ContractError(f"unsupported model format {doc.get('format')!r}")
        p = doc["params"]
        params = GdbnParams(tau_max=p["tau_max"], gng=GngParams(**p["gng"]),
                            measurement_share=p["measurement_share"])
        kind = SignalKind(doc["kind"])
        clusters = ClusterSet(tuple(
            Cluster(c["id"], Gaussian(np.array(c["mean"]), np.array(c["cov"])), c["member_count"])
            for c in doc["clusters"]), kind)
        t = doc["transition"]
        transition = TransitionModel(
            tuple(StochasticMatrix(np.array(m)) for m in t["matrices"]),
            StochasticMatrix(np.array(t["fallback"])),
            np.array(t["bucket_counts"], dtype=float))
        return cls(kind, clusters, transition, doc["process_noise_std"],
                   doc["measurement_noise_std"], np.array(doc["measurement_cov"]),
                   doc["seed"], params)


def null_force_predict(prev: GeneralizedState, model: GdbnModel | None = None) -> GeneralizedState:
    """One constant-velocity step with no control: value += derivative."""
    return GeneralizedState(prev.value + prev.derivative, prev.derivative)


def generalized_error(observation: GeneralizedState, predicted: GeneralizedState, H=None) -> np.ndarray:
    """H^-1 z - x in generalized coordinates (H defaults to identity)."""
    z = observation.stacked()
    x = predicted.stacked()
    if H is None:
        return z - x
    H = np.asarray(H, dtype=float)
    if abs(np.linalg.det(H)) < 1e-12:
        raise ContractError("measurement matrix is singular")
    return np.linalg.solve(H, z) - x


def generalized_errors(lifted: np.ndarray) -> np.ndarray:
    """Errors of the null-force prediction along a lifted series, (T-1, 2d)."""
    d = lifted.shape[1] // 2
    A = constant_velocity_matrix(d)
    return lifted[1:] - lifted[:-1] @ A.T


def _fit_cluster_set(samples: np.ndarray, labels: np.ndarray, kind) -> ClusterSet:
    clusters = []
    for node in np.unique(labels):
        members = samples[labels == node]
        mean = members.mean(axis=0)
        cov = np.cov(members.T, bias=True) if len(members) > 1 else np.zeros((samples.shape[1],) * 2)
        cov = np.atleast_2d(cov)
        clusters.append(Cluster(len(clusters), Gaussian(mean, 0.5 * (cov + cov.T)), len(members)))
    return ClusterSet(tuple(clusters), kind)


def gng_cluster(samples, max_nodes: int, params: GngParams = GngParams(), seed: int = 0,
                kind=SignalKind.GPS) -> ClusterSet:
    """GNG quantization, then one Gaussian per node over its Voronoi members.

    Nodes that end with no members are dropped, so the result can hold fewer
    than ``max_nodes`` clusters.
    """
    samples = np.asarray(samples, dtype=float)
    if max_nodes < 2:
        raise ContractError("need at least two nodes")
    if len(samples) < 10 * max_nodes:
        raise InsufficientDataError(f"need at least {10 * max_nodes} samples, got {len(samples)}")
    gng = GrowingNeuralGas(max_nodes, params, seed).fit(samples)
    return _fit_cluster_set(samples, gng.predict(samples), kind)


def assign_cluster(x, clusters: ClusterSet) -> int:
    """Nearest cluster by Mahalanobis distance; ties go to the lowest id."""
    x = np.asarray(x, dtype=float)
    best, best_d = 0, np.inf
    for c in clusters:
        diff = x - c.gaussian.mean
        d = diff @ np.linalg.solve(regularize(c.gaussian.cov), diff)
        if d < best_d:
            best, best_d = c.id, d
    return best


def assign_clusters(samples, clusters: ClusterSet) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    dists = []
    for c in clusters:
        diff = samples - c.gaussian.mean
        sol = np.linalg.solve(regularize(c.gaussian.cov), diff.T).T
        dists.append(np.einsum("ij,ij->i", diff, sol))
    return np.argmin(np.stack(dists, axis=1), axis=1)


def _transition_counts(labels: Sequence[int], m: int, tau_max: int) -> np.ndarray:
    counts = np.zeros((tau_max, m, m))
    tau = 1
    for prev, cur in zip(labels[:-1], labels[1:]):
        counts[min(tau, tau_max) - 1, prev, cur] += 1
        tau = tau + 1 if cur == prev else 1
    return counts


def _transition_model(counts: np.ndarray) -> TransitionModel:
    matrices = tuple(row_normalize(c) for c in counts)
    return TransitionModel(matrices, row_normalize(counts.sum(axis=0)), counts.sum(axis=2))


def estimate_transitions(labels: Sequence[int], m: int, tau_max: int = 20) -> TransitionModel:
    """Count j -> i transitions bucketed by the dwell time spent in j.

    Self-transitions are counted; dwell times beyond ``tau_max`` share the
    last bucket.
    """
    labels = [int(v) for v in labels]
    if len(labels) < 2:
        raise ContractError("need at least two labels")
    if tau_max < 1:
        raise ContractError("tau_max must be >= 1")
    return _transition_model(_transition_counts(labels, m, tau_max))


def learn_gdbn(series, n_clusters: int, params: GdbnParams = GdbnParams(), seed: int = 0,
               kind=SignalKind.GPS, derivatives=None) -> GdbnModel:
    """Learn a GDBN from one or more time series of d-vectors.

    ``series`` is a (T, d) array or a list of them (separate training
    experiences; transitions are not counted across their boundaries).
    ``derivatives`` optionally gives the derivative channel per series.
    """
    if isinstance(series, np.ndarray) and series.ndim == 2:
        series = [series]
        derivatives = None if derivatives is None else [derivatives]
    if derivatives is None:
        derivatives = [None] * len(series)
    lifted = [lift(s, d) for s, d in zip(series, derivatives)]
    errors = [generalized_errors(z) for z in lifted]
    samples = np.vstack(errors)
    if len(samples) < 10 * n_clusters:
        raise InsufficientDataError(f"need at least {10 * n_clusters} steps, got {len(samples)}")
    clusters = gng_cluster(samples, n_clusters, params.gng, seed, kind)
    m = len(clusters)
    counts = np.zeros((params.tau_max, m, m))
    labels_all = []
    for e in errors:
        labels = assign_clusters(e, clusters)
        labels_all.append(labels)
        if len(labels) >= 2:
            counts += _transition_counts(list(labels), m, params.tau_max)
    labels = np.concatenate(labels_all)
    residuals = samples - clusters.means()[labels]
    pooled = np.atleast_2d(np.cov(residuals.T, bias=True))
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    meas_cov = params.measurement_share * pooled
    meas_cov = 0.5 * (meas_cov + meas_cov.T) + (1e-6 * rms) ** 2 * np.eye(pooled.shape[0])
    floor = 1e-3 * rms
    return GdbnModel(SignalKind(kind), clusters, _transition_model(counts), floor,
                     float(np.sqrt(np.trace(meas_cov) / meas_cov.shape[0])), meas_cov, seed, params)
