"""Shared numeric vocabulary: generalized states, Gaussians, clusters and
stochastic matrices, plus the handful of pure functions everything else uses."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when a caller violates a documented precondition."""


class InsufficientDataError(ContractError):
    """Too few samples to learn or calibrate."""


class ModelMismatchError(ContractError):
    """A stored model does not fit the requested configuration."""


class SignalKind(str, enum.Enum):
    RF = "RF"
    GPS = "GPS"


class Hypothesis(str, enum.Enum):
    H0 = "H0"  # no attack
    H1 = "H1"  # jammer on the V2I link
    H2 = "H2"  # GPS spoofer
    INDETERMINATE = "indeterminate"


def _as_finite_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ContractError(f"{name} must be a vector")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class GeneralizedState:
    """A value vector stacked with its first-order derivative."""

    value: np.ndarray
    derivative: np.ndarray

    def __post_init__(self):
        v = _as_finite_vector(self.value, "value")
        d = _as_finite_vector(self.derivative, "derivative")
        if v.shape != d.shape:
            raise ContractError("value and derivative must have the same dimension")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "derivative", d)

    @property
    def dim(self) -> int:
        return self.value.shape[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.value, self.derivative])

    @classmethod
    def from_stacked(cls, x) -> "GeneralizedState":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] % 2:
            raise ContractError("stacked generalized state needs even length")
        d = x.shape[0] // 2
        return cls(x[:d], x[d:])


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_finite_vector(self.mean, "mean")
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ContractError(f"covariance shape {cov.shape} does not match mean dimension {n}")
        if not np.all(np.isfinite(cov)):
            raise ContractError("covariance has non-finite entries")
        scale = max(np.max(np.abs(cov)), 1.0)
        if np.max(np.abs(cov - cov.T)) > 1e-9 * scale:
            raise ContractError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() < -1e-9 * scale:
            raise ContractError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> float:
        x = np.asarray(x, dtype=float)
        cov = regularize(self.cov)
        diff = x - self.mean
        sign, logdet = np.linalg.slogdet(cov)
        maha = diff @ np.linalg.solve(cov, diff)
        return float(-0.5 * (maha + logdet + self.dim * np.log(2 * np.pi)))


@dataclass(frozen=True)
class Cluster:
    id: int
    gaussian: Gaussian
    member_count: int = 1

    def __post_init__(self):
        if self.member_count < 1:
            raise ContractError("cluster must have at least one member")

    @property
    def mean_value(self) -> np.ndarray:
        d = self.gaussian.dim // 2
        return self.gaussian.mean[:d]

    @property
    def mean_derivative(self) -> np.ndarray:
        d = self.gaussian.dim // 2
        return self.gaussian.mean[d:]


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple
    kind: SignalKind

    def __post_init__(self):
        clusters = tuple(self.clusters)
        if not clusters:
            raise ContractError("cluster set must be nonempty")
        if [c.id for c in clusters] != list(range(len(clusters))):
            raise ContractError("cluster ids must be 0..M-1 in order")
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "kind", SignalKind(self.kind))

    def __len__(self) -> int:
        return len(self.clusters)

    def __getitem__(self, i: int) -> Cluster:
        return self.clusters[i]

    def __iter__(self):
        return iter(self.clusters)

    def means(self) -> np.ndarray:
        return np.stack([c.gaussian.mean for c in self.clusters])


@dataclass(frozen=True)
class StochasticMatrix:
    """Row-stochastic matrix; rows index the conditioning state."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ContractError("stochastic matrix entries must be finite and nonnegative")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-9:
            raise ContractError("rows must sum to one")
        p.setflags(write=False)
        object.__setattr__(self, "entries", p)

    @property
    def shape(self) -> tuple:
        return self.entries.shape

    def row(self, i: int) -> np.ndarray:
        return self.entries[i]

    def stationary(self) -> np.ndarray:
        """Left eigenvector for eigenvalue 1 (square matrices only)."""
        p = self.entries
        if p.shape[0] != p.shape[1]:
            raise ContractError("stationary distribution needs a square matrix")
        vals, vecs = np.linalg.eig(p.T)
        k = int(np.argmin(np.abs(vals - 1.0)))
        pi = np.abs(np.real(vecs[:, k]))
        return pi / pi.sum()


def regularize(cov: np.ndarray) -> np.ndarray:
    """Add eps*I with eps = 1e-9 * trace / n so near-degenerate clusters invert."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    eps = 1e-9 * np.trace(cov) / n
    if eps <= 0:
        eps = 1e-12
    return cov + eps * np.eye(n)


def _positive_definite(cov: np.ndarray) -> np.ndarray:
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        return regularize(cov)


def gaussian_bhattacharyya(a: Gaussian, b: Gaussian) -> float:
    """Closed-form Bhattacharyya coefficient between two Gaussians, in [0, 1].

    Singular covariances are regularized first.
    """
    if a.dim != b.dim:
        raise ContractError(f"dimension mismatch: {a.dim} vs {b.dim}")
    ca, cb = _positive_definite(a.cov), _positive_definite(b.cov)
    avg = 0.5 * (ca + cb)
    diff = a.mean - b.mean
    maha = diff @ np.linalg.solve(avg, diff)
    _, ld_avg = np.linalg.slogdet(avg)
    _, ld_a = np.linalg.slogdet(ca)
    _, ld_b = np.linalg.slogdet(cb)
    distance = 0.125 * maha + 0.5 * (ld_avg - 0.5 * (ld_a + ld_b))
    return float(np.clip(np.exp(-distance), 0.0, 1.0))


def row_normalize(counts) -> StochasticMatrix:
    c = np.atleast_2d(np.asarray(counts, dtype=float))
    if not np.all(np.isfinite(c)):
        raise ContractError("counts must be finite")
    if np.any(c < 0):
        raise ContractError("counts must be nonnegative")
    sums = c.sum(axis=1, keepdims=True)
    out = np.full_like(c, 1.0 / c.shape[1])
    nz = sums[:, 0] > 0
    out[nz] = c[nz] / sums[nz]
    return StochasticMatrix(out)


def rmse(predictions: Sequence, observations: Sequence) -> float:
    """Root mean square error pooled over time steps and vector components."""
    p = np.asarray(predictions, dtype=float)
    o = np.asarray(observations, dtype=float)
    if p.size == 0 or len(p) == 0:
        raise ContractError("rmse needs at least one sample")
    if p.shape != o.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {o.shape}")
    return float(np.sqrt(np.mean((p - o) ** 2)))


def moment_match(weights, gaussians: Sequence[Gaussian]) -> Gaussian:
    """Collapse a Gaussian mixture to the single Gaussian with equal first two moments."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    means = np.stack([g.mean for g in gaussians])
    mean = w @ means
    dev = means - mean
    cov = np.einsum("k,kij->ij", w, np.stack([g.cov for g in gaussians]))
    cov = cov + (dev * w[:, None]).T @ dev
    return Gaussian(mean, 0.5 * (cov + cov.T))
