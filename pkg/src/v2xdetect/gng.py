"""Growing Neural Gas (Fritzke 1995) with a hard node cap."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GngParams:
    insert_every: int = 100  # lambda
    eps_winner: float = 0.2
    eps_neighbor: float = 0.006
    max_edge_age: int = 50
    insert_error_decay: float = 0.5  # alpha
    error_decay: float = 0.995  # d
    epochs: int = 10
    max_extra_epochs: int = 50


class GrowingNeuralGas:
    """Incremental topology-learning vector quantizer.

    Nodes live in ``self.nodes`` (K, D); edges are an age matrix with -1
    meaning no edge.
    """

    def __init__(self, max_nodes: int, params: GngParams = GngParams(), seed: int = 0):
        self.max_nodes = max_nodes
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.nodes = np.empty((0, 0))
        self.error = np.empty(0)
        self.age = np.empty((0, 0), dtype=int)
        self._steps = 0

    def _init(self, data: np.ndarray) -> None:
        i, j = self.rng.choice(len(data), size=2, replace=False)
        self.nodes = data[[i, j]].astype(float).copy()
        self.error = np.zeros(2)
        self.age = -np.ones((2, 2), dtype=int)

    def _remove_isolated(self) -> None:
        keep = (self.age >= 0).any(axis=1)
        if keep.all() or keep.sum() < 2:
            return
        self.nodes = self.nodes[keep]
        self.error = self.error[keep]
        self.age = self.age[np.ix_(keep, keep)]

    def _insert(self) -> None:
        q = int(np.argmax(self.error))
        nbrs = np.flatnonzero(self.age[q] >= 0)
        if nbrs.size == 0:
            return
        f = int(nbrs[np.argmax(self.error[nbrs])])
        new = 0.5 * (self.nodes[q] + self.nodes[f])
        a = self.params.insert_error_decay
        self.error[q] *= a
        self.error[f] *= a
        k = len(self.nodes)
        self.nodes = np.vstack([self.nodes, new])
        self.error = np.append(self.error, self.error[q])
        age = -np.ones((k + 1, k + 1), dtype=int)
        age[:k, :k] = self.age
        age[q, f] = age[f, q] = -1
        age[q, k] = age[k, q] = 0
        age[f, k] = age[k, f] = 0
        self.age = age

    def partial_fit(self, x: np.ndarray) -> None:
        p = self.params
        d2 = np.sum((self.nodes - x) ** 2, axis=1)
        s1, s2 = (int(i) for i in np.argsort(d2, kind="stable")[:2])
        nbr = self.age[s1] >= 0
        self.age[s1, nbr] += 1
        self.age[nbr, s1] += 1
        self.error[s1] += d2[s1]
        self.nodes[s1] += p.eps_winner * (x - self.nodes[s1])
        self.nodes[nbr] += p.eps_neighbor * (x - self.nodes[nbr])
        self.age[s1, s2] = self.age[s2, s1] = 0
        old = self.age > p.max_edge_age
        if old.any():
            self.age[old] = -1
            self._remove_isolated()
        self._steps += 1
        if self._steps % p.insert_every == 0 and len(self.nodes) < self.max_nodes:
            self._insert()
        self.error *= p.error_decay

    def fit(self, data) -> "GrowingNeuralGas":
        data = np.asarray(data, dtype=float)
        self._init(data)
        p = self.params
        for epoch in range(p.epochs + p.max_extra_epochs):
            if epoch >= p.epochs and len(self.nodes) >= self.max_nodes:
                break
            for i in self.rng.permutation(len(data)):
                self.partial_fit(data[i])
        return self

    def predict(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        d2 = ((data[:, None, :] - self.nodes[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)
