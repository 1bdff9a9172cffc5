"""Interactive modified Markov jump particle filter (IM-MJPF).

Particles carry an RF cluster, a trajectory cluster predicted from it
through the interactive matrix, and one Kalman belief per signal. All
per-particle arithmetic is batched over the particle axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import Gaussian
from .coupling import CoupledModel
from .gdbn import GdbnModel

MIN_BUCKET_COUNT = 5
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Particle:
    rf_cluster: int
    gps_cluster: int
    rf_belief: Gaussian
    gps_belief: Gaussian
    weight: float


@dataclass(frozen=True)
class FilterState:
    rf_cluster: np.ndarray
    gps_cluster: np.ndarray
    rf_mean: np.ndarray  # (L, 2d)
    rf_cov: np.ndarray  # (L, 2d, 2d)
    gps_mean: np.ndarray
    gps_cov: np.ndarray
    weights: np.ndarray
    dwell: np.ndarray
    t: int = 0
    surprise: bool = False

    @property
    def n_particles(self) -> int:
        return self.weights.shape[0]

    @property
    def particles(self) -> list[Particle]:
        return [Particle(int(self.rf_cluster[i]), int(self.gps_cluster[i]),
                         Gaussian(self.rf_mean[i], self.rf_cov[i]),
                         Gaussian(self.gps_mean[i], self.gps_cov[i]), float(self.weights[i]))
                for i in range(self.n_particles)]


@dataclass(frozen=True)
class Mixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray = field(repr=False)

    def collapse(self) -> Gaussian:
        w = self.weights / self.weights.sum()
        mean = w @ self.means
        dev = self.means - mean
        cov = np.einsum("l,lij->ij", w, self.covs) + (dev * w[:, None]).T @ dev
        return Gaussian(mean, 0.5 * (cov + cov.T))

    def point(self) -> np.ndarray:
        d = self.means.shape[1] // 2
        return self.weights @ self.means[:, :d]


@dataclass(frozen=True)
class StepPrediction:
    rf: Mixture
    gps: Mixture
    state: FilterState  # predicted (pre-update) particle set

    @property
    def rf_point(self) -> np.ndarray:
        return self.rf.point()

    @property
    def gps_point(self) -> np.ndarray:
        return self.gps.point()


@dataclass(frozen=True)
class StepRecord:
    """What the detector needs from one filter step."""

    t: int
    rf_predictive: Gaussian
    gps_predictive: Gaussian
    rf_diagnostic: Gaussian
    gps_diagnostic: Gaussian
    rf_point: np.ndarray
    gps_point: np.ndarray
    rf_observed: np.ndarray
    gps_observed: np.ndarray
    surprise: bool


class _Tables:
    """Per-model arrays the batched filter indexes by cluster id."""

    def __init__(self, g: GdbnModel):
        self.A = g.A
        self.B = g.B
        self.U = np.stack([g.control(m) for m in range(g.n_clusters)]) @ g.B.T
        self.Q = np.stack([g.process_cov(m) for m in range(g.n_clusters)])
        self.R = g.measurement_cov
        tr = g.transition
        m = g.n_clusters
        self.rows = np.empty((tr.tau_max, m, m))
        for k in range(tr.tau_max):
            for j in range(m):
                self.rows[k, j] = tr.row(j, k + 1, MIN_BUCKET_COUNT)


_TABLE_CACHE: dict[int, tuple] = {}


def _tables(model: CoupledModel) -> tuple[_Tables, _Tables]:
    key = id(model)
    hit = _TABLE_CACHE.get(key)
    if hit is None or hit[0] is not model:
        hit = (model, _Tables(model.rf), _Tables(model.gps))
        _TABLE_CACHE.clear()
        _TABLE_CACHE[key] = hit
    return hit[1], hit[2]


def _sample_rows(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a (L, M) probability array."""
    u = rng.random(rows.shape[0])
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] > cdf).sum(axis=1)


def init_filter(model: CoupledModel, n_particles: int, seed=0, *, rf_init=None,
                gps_init=None) -> FilterState:
    """Equally weighted particles.

    RF clusters come from the stationary law of the fallback transition
    matrix, trajectory clusters through the interactive matrix. Beliefs
    start at the sampled clusters' Gaussians, or at the given lifted
    observations with the sensor covariance.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = n_particles
    pi = model.rf.transition.fallback.stationary()
    rf_c = _sample_rows(np.tile(pi, (L, 1)), rng)
    gps_c = _sample_rows(model.phi.entries[rf_c], rng)

    def beliefs(g: GdbnModel, clusters, init):
        if init is None:
            means = np.stack([g.clusters[c].gaussian.mean for c in clusters])
            covs = np.stack([g.clusters[c].gaussian.cov for c in clusters])
        else:
            means = np.tile(np.asarray(init, dtype=float), (L, 1))
            covs = np.tile(g.measurement_cov, (L, 1, 1))
        return means, covs

    rf_m, rf_P = beliefs(model.rf, rf_c, rf_init)
    gps_m, gps_P = beliefs(model.gps, gps_c, gps_init)
    return FilterState(rf_c, gps_c, rf_m, rf_P, gps_m, gps_P, np.full(L, 1.0 / L),
                       np.ones(L, dtype=int))


def _kalman_predict(tab: _Tables, mean, cov, clusters):
    mean = mean @ tab.A.T + tab.U[clusters]
    cov = np.einsum("ij,ljk,mk->lim", tab.A, cov, tab.A) + tab.Q[clusters]
    return mean, 0.5 * (cov + np.swapaxes(cov, 1, 2))


def predict_step(state: FilterState, model: CoupledModel, rng: np.random.Generator) -> StepPrediction:
    """Jump the discrete levels, then time-update every particle's Kalman pair."""
    rf_tab, gps_tab = _tables(model)
    tau_idx = np.minimum(state.dwell, rf_tab.rows.shape[0]) - 1
    rf_next = _sample_rows(rf_tab.rows[tau_idx, state.rf_cluster], rng)
    dwell = np.where(rf_next == state.rf_cluster, state.dwell + 1, 1)
    gps_next = _sample_rows(model.phi.entries[rf_next], rng)
    rf_m, rf_P = _kalman_predict(rf_tab, state.rf_mean, state.rf_cov, rf_next)
    gps_m, gps_P = _kalman_predict(gps_tab, state.gps_mean, state.gps_cov, gps_next)
    new = replace(state, rf_cluster=rf_next, gps_cluster=gps_next, rf_mean=rf_m, rf_cov=rf_P,
                  gps_mean=gps_m, gps_cov=gps_P, dwell=dwell, t=state.t + 1, surprise=False)
    return StepPrediction(Mixture(state.weights, rf_m, rf_P), Mixture(state.weights, gps_m, gps_P), new)


def _kalman_update(mean, cov, z, R):
    """Batched measurement update with H = I; returns mean, cov, log-likelihood."""
    S = cov + R
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    chol = np.linalg.cholesky(S)
    innov = z - mean
    sol = np.linalg.solve(chol, innov[:, :, None])[:, :, 0]
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    with np.errstate(over="ignore"):  # far outliers give -inf, handled by the caller
        loglik = -0.5 * (np.sum(sol ** 2, axis=1) + logdet + mean.shape[1] * _LOG_2PI)
    gain = np.linalg.solve(S, cov).transpose(0, 2, 1)  # P S^-1 (both symmetric)
    new_mean = mean + np.einsum("lij,lj->li", gain, innov)
    eye = np.eye(mean.shape[1])
    ikh = eye - gain
    new_cov = np.einsum("lij,ljk,lmk->lim", ikh, cov, ikh) + np.einsum("lij,jk,lmk->lim", gain, R, gain)
    return new_mean, 0.5 * (new_cov + np.swapaxes(new_cov, 1, 2)), loglik


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    L = weights.shape[0]
    positions = (rng.random() + np.arange(L)) / L
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="left")


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(weights ** 2))


def update_step(state: FilterState, prediction: StepPrediction | None, rf_obs, gps_obs,
                model: CoupledModel, rng: np.random.Generator | None = None, *,
                resample: bool = True) -> FilterState:
    """Measurement-update both Kalman banks and reweight particles by the
    product of the two cluster-conditioned predictive likelihoods.

    ``state`` is the predicted particle set (``prediction.state``). Weights
    that underflow everywhere are reset to uniform and the step is flagged
    as maximal surprise. Systematic resampling runs when ESS < L/2 unless
    ``resample`` is off.
    """
    if prediction is not None:
        state = prediction.state
    rf_tab, gps_tab = _tables(model)
    rf_m, rf_P, ll_rf = _kalman_update(state.rf_mean, state.rf_cov, np.asarray(rf_obs, float), rf_tab.R)
    gps_m, gps_P, ll_gps = _kalman_update(state.gps_mean, state.gps_cov, np.asarray(gps_obs, float), gps_tab.R)
    logw = np.log(np.maximum(state.weights, 1e-300)) + ll_rf + ll_gps
    surprise = False
    if not np.any(np.isfinite(logw)):
        w = np.full_like(state.weights, 1.0 / state.n_particles)
        surprise = True
    else:
        logw = np.where(np.isfinite(logw), logw, -np.inf)
        w = np.exp(logw - logw.max())
        total = w.sum()
        if not total > 0:
            w = np.full_like(state.weights, 1.0 / state.n_particles)
            surprise = True
        else:
            w = w / total
    new = replace(state, rf_mean=rf_m, rf_cov=rf_P, gps_mean=gps_m, gps_cov=gps_P, weights=w,
                  surprise=surprise)
    if resample and effective_sample_size(w) < 0.5 * state.n_particles:
        if rng is None:
            raise ValueError("resampling needs an rng")
        idx = systematic_resample(w, rng)
        new = replace(new, rf_cluster=new.rf_cluster[idx], gps_cluster=new.gps_cluster[idx],
                      rf_mean=rf_m[idx], rf_cov=rf_P[idx], gps_mean=gps_m[idx], gps_cov=gps_P[idx],
                      dwell=new.dwell[idx], weights=np.full_like(w, 1.0 / len(w)))
    return new


def run_filter(model: CoupledModel, rf_series, gps_series, n_particles: int = 100,
               seed: int = 0) -> list[StepRecord]:
    """Filter time-aligned lifted series (T, 2d) and return one record per
    step t = 1..T-1. The first sample initializes the beliefs."""
    rf_series = np.asarray(rf_series, dtype=float)
    gps_series = np.asarray(gps_series, dtype=float)
    if rf_series.shape[0] != gps_series.shape[0]:
        raise ValueError("series must be time aligned")
    rng = np.random.default_rng(seed)
    state = init_filter(model, n_particles, rng, rf_init=rf_series[0], gps_init=gps_series[0])
    rf_R, gps_R = model.rf.measurement_cov, model.gps.measurement_cov
    records = []
    for t in range(1, rf_series.shape[0]):
        pred = predict_step(state, model, rng)
        state = update_step(state, pred, rf_series[t], gps_series[t], model, rng)
        records.append(StepRecord(
            t,
            pred.rf.collapse(), pred.gps.collapse(),
            Gaussian(rf_series[t], rf_R), Gaussian(gps_series[t], gps_R),
            pred.rf_point, pred.gps_point,
            rf_series[t, : rf_series.shape[1] // 2], gps_series[t, : gps_series.shape[1] // 2],
            state.surprise,
        ))
    return records
