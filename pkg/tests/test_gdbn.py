import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import kmeans_centroids, recover_two_regime
from v2xdetect.core import (Cluster, ClusterSet, ContractError, Gaussian, GeneralizedState,
                            InsufficientDataError, SignalKind)
from v2xdetect.gdbn import (GdbnModel, assign_cluster, assign_clusters,
                            estimate_transitions, generalized_error, generalized_errors,
                            gng_cluster, learn_gdbn, lift, null_force_predict)
from v2xdetect.gng import GngParams, GrowingNeuralGas


def gs(value, derivative):
    return GeneralizedState(value, derivative)


class TestNullForce:
    def test_constant_velocity_step(self):
        out = null_force_predict(gs([0, 0], [1, 0]))
        assert np.array_equal(out.value, [1, 0]) and np.array_equal(out.derivative, [1, 0])

    def test_zero_state(self):
        out = null_force_predict(gs([0, 0], [0, 0]))
        assert not out.stacked().any()

    def test_two_steps(self):
        out = null_force_predict(null_force_predict(gs([0, 0], [1, 2])))
        assert np.array_equal(out.value, [2, 4])


class TestGeneralizedError:
    def test_perfect_prediction(self):
        p = gs([1.0, 2.0], [0.5, 0.5])
        assert not generalized_error(p, p).any()

    def test_value_excess(self):
        err = generalized_error(gs([2.0, 2.0], [0.5, 0.5]), gs([1.0, 2.0], [0.5, 0.5]))
        assert np.array_equal(err, [1, 0, 0, 0])

    def test_scaled_measurement_halves_residual(self):
        obs = gs([4.0, 2.0], [2.0, 0.0])
        err = generalized_error(obs, gs([0.0, 0.0], [0.0, 0.0]), H=2 * np.eye(4))
        assert np.allclose(err, obs.stacked() / 2)

    def test_singular_measurement_matrix(self):
        with pytest.raises(ContractError):
            generalized_error(gs([1.0], [0.0]), gs([0.0], [0.0]), H=np.zeros((2, 2)))

    def test_series_matches_pointwise(self):
        rng = np.random.default_rng(0)
        z = lift(rng.normal(size=(20, 2)))
        errs = generalized_errors(z)
        for t in (1, 7, 19):
            prev = GeneralizedState.from_stacked(z[t - 1])
            obs = GeneralizedState.from_stacked(z[t])
            assert np.allclose(errs[t - 1], generalized_error(obs, null_force_predict(prev)))


def two_blobs(seed=0, n=400, std=0.3):
    rng = np.random.default_rng(seed)
    centers = np.array([[-3.0, 0.0], [3.0, 1.0]])
    data = np.vstack([c + std * rng.normal(size=(n, 2)) for c in centers])
    return data, std


class TestGng:
    def test_two_blobs_match_kmeans(self):
        data, std = two_blobs()
        clusters = gng_cluster(data, 2, seed=0)
        ours = clusters.means()
        ours = ours[np.lexsort(ours.T[::-1])]
        assert np.all(np.linalg.norm(ours - kmeans_centroids(data, 2), axis=1) <= 0.1 * std)

    def test_single_blob_means_inside_three_sigma(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(500, 2)) + [5.0, -2.0]
        clusters = gng_cluster(data, 2, seed=0)
        centre = data.mean(axis=0)
        assert np.all(np.linalg.norm(clusters.means() - centre, axis=1) <= 3.0)

    def test_one_node_disallowed(self):
        with pytest.raises(ContractError):
            gng_cluster(two_blobs()[0], 1)

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            gng_cluster(np.zeros((15, 2)), 2)

    def test_deterministic(self):
        data, _ = two_blobs(3)
        a, b = gng_cluster(data, 4, seed=7), gng_cluster(data, 4, seed=7)
        assert np.array_equal(a.means(), b.means())

    @settings(max_examples=15, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 1000))
    def test_node_budget_and_total_assignment(self, max_nodes, seed):
        data = np.random.default_rng(seed).normal(size=(20 * max_nodes, 3))
        gng = GrowingNeuralGas(max_nodes, GngParams(epochs=3), seed).fit(data)
        labels = gng.predict(data)
        assert gng.nodes.shape[0] <= max_nodes
        assert labels.shape == (len(data),)
        assert labels.min() >= 0 and labels.max() < gng.nodes.shape[0]


def cluster_set(means):
    return ClusterSet(tuple(Cluster(i, Gaussian(np.asarray(m, float), np.eye(len(m))), 1)
                            for i, m in enumerate(means)), SignalKind.GPS)


class TestAssign:
    clusters = cluster_set([[0.0, 0.0], [5.0, 0.0], [7.0, 0.0]])

    def test_at_mean(self):
        assert assign_cluster([0.0, 0.0], self.clusters) == 0

    def test_tie_goes_to_lowest_id(self):
        assert assign_cluster([6.0, 0.0], self.clusters) == 1

    def test_far_point(self):
        assert assign_cluster([1e6, 3.0], self.clusters) == 2

    def test_batch_matches_single(self):
        pts = np.random.default_rng(0).uniform(-2, 9, size=(50, 2))
        assert list(assign_clusters(pts, self.clusters)) == [assign_cluster(p, self.clusters) for p in pts]


class TestTransitions:
    def test_self_transition_counting(self):
        tm = estimate_transitions([0, 0, 1, 1], 2, tau_max=1)
        assert np.allclose(tm.fallback.entries, [[0.5, 0.5], [0.0, 1.0]])

    def test_constant_sequence(self):
        tm = estimate_transitions([0, 0, 0], 3, tau_max=2)
        assert np.allclose(tm.fallback.row(0), [1, 0, 0])

    def test_alternating(self):
        tm = estimate_transitions([0, 1, 0, 1], 2)
        assert np.allclose(tm.fallback.entries, [[0, 1], [1, 0]])

    def test_dwell_buckets(self):
        # stays in 0 for three steps, then leaves
        tm = estimate_transitions([0, 0, 0, 1], 2, tau_max=5)
        assert np.allclose(tm.matrices[0].row(0), [1, 0])
        assert np.allclose(tm.matrices[1].row(0), [1, 0])
        assert np.allclose(tm.matrices[2].row(0), [0, 1])
        assert tm.bucket_counts[2, 0] == 1

    def test_sparse_bucket_falls_back(self):
        tm = estimate_transitions([0, 0, 0, 1], 2, tau_max=5)
        assert np.allclose(tm.row(0, 3, min_count=5), tm.fallback.row(0))
        assert np.allclose(tm.row(0, 3, min_count=1), [0, 1])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=2, max_size=200), st.integers(1, 6))
    def test_rows_stochastic(self, labels, tau_max):
        tm = estimate_transitions(labels, 4, tau_max)
        for m in (*tm.matrices, tm.fallback):
            assert np.all(np.abs(m.entries.sum(axis=1) - 1) <= 1e-9)

    def test_invalid(self):
        with pytest.raises(ContractError):
            estimate_transitions([0], 2)
        with pytest.raises(ContractError):
            estimate_transitions([0, 1], 2, tau_max=0)


def test_two_regime_transition_recovery():
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert np.all(np.abs(recover_two_regime(P) - P) <= 0.1)


class TestLearn:
    def test_constant_velocity_noiseless(self):
        t = np.arange(200, dtype=float)
        obs = np.column_stack([2.0 + 0.5 * t, -1.0 + 0.25 * t])
        vel = np.tile([0.5, 0.25], (200, 1))
        model = learn_gdbn(obs, 2, derivatives=vel)
        assert np.abs(model.clusters.means()).max() <= 1e-9

    def test_backward_difference_lift_is_exact_after_first_step(self):
        t = np.arange(50, dtype=float)
        obs = np.column_stack([2.0 + 0.5 * t, -1.0 + 0.25 * t])
        assert np.abs(generalized_errors(lift(obs))[1:]).max() <= 1e-12

    def test_piecewise_two_velocity_offsets(self):
        # speed alternates 1 / 3 m per step; the sensor reports no derivative,
        # so each error's value part is the segment velocity
        v = np.where((np.arange(400) // 50) % 2 == 0, 1.0, 3.0)
        x = np.concatenate([[0.0], np.cumsum(v)])[:, None]
        model = learn_gdbn(x, 2, derivatives=np.zeros_like(x))
        errs = generalized_errors(lift(x, np.zeros_like(x)))
        seg = np.arange(400) // 50 % 2
        oracle = sorted(errs[seg == k, 0].mean() for k in (0, 1))
        learned = sorted(model.clusters.means()[:, 0])
        assert np.allclose(learned, oracle, rtol=0.1)

    def test_deterministic_and_serializable(self):
        rng = np.random.default_rng(0)
        obs = np.cumsum(rng.normal(size=(300, 2)), axis=0)
        a, b = learn_gdbn(obs, 3, seed=4), learn_gdbn(obs, 3, seed=4)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        c = GdbnModel.from_dict(json.loads(json.dumps(a.to_dict())))
        assert c.to_dict() == a.to_dict()

    def test_structure(self):
        obs = np.cumsum(np.random.default_rng(1).normal(size=(300, 2)), axis=0)
        model = learn_gdbn(obs, 3)
        assert abs(np.linalg.det(model.A)) > 0 and abs(np.linalg.det(model.H)) > 0
        assert model.transition.fallback.shape == (model.n_clusters,) * 2
        for m in range(model.n_clusters):
            assert np.all(np.linalg.eigvalsh(model.process_cov(m)) > 0)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            learn_gdbn(np.zeros((20, 2)), 5)

    def test_bad_format(self):
        with pytest.raises(ContractError):
            GdbnModel.from_dict({"format": "other"})
