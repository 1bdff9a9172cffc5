"""Interactive matrix coupling RF clusters to trajectory clusters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractError, StochasticMatrix, row_normalize
from .gdbn import GdbnModel

FORMAT = "v2xdetect.coupled/1"


@dataclass(frozen=True)
class CoupledModel:
    rf: GdbnModel
    gps: GdbnModel
    phi: StochasticMatrix

    def __post_init__(self):
        if self.phi.shape != (self.rf.n_clusters, self.gps.n_clusters):
            raise ContractError(
                f"phi is {self.phi.shape}, expected {(self.rf.n_clusters, self.gps.n_clusters)}")

    def to_dict(self) -> dict:
        return {"format": FORMAT, "rf": self.rf.to_dict(), "gps": self.gps.to_dict(),
                "phi": self.phi.entries.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "CoupledModel":
        if doc.get("format") != FORMAT:
            raise ContractError(f"unsupported coupled model format {doc.get('format')!r}")
        return cls(GdbnModel.from_dict(doc["rf"]), GdbnModel.from_dict(doc["gps"]),
                   StochasticMatrix(np.array(doc["phi"])))


def cooccurrence_counts(rf_labels, gps_labels, m1: int, m2: int) -> np.ndarray:
    rf = np.asarray(rf_labels, dtype=int)
    gps = np.asarray(gps_labels, dtype=int)
    if rf.shape != gps.shape:
        raise ContractError("label sequences must have equal length")
    counts = np.zeros((m1, m2))
    np.add.at(counts, (rf, gps), 1.0)
    return counts


def learn_phi(rf_labels, gps_labels, m1: int, m2: int) -> StochasticMatrix:
    """Row j is the empirical distribution of the trajectory cluster firing
    while the RF signal sits in cluster j (same time step)."""
    return row_normalize(cooccurrence_counts(rf_labels, gps_labels, m1, m2))


def predict_gps_cluster(rf_cluster: int, phi: StochasticMatrix, rng: np.random.Generator) -> int:
    row = phi.row(rf_cluster)
    return int(rng.choice(len(row), p=row))
