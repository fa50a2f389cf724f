"""Tests for the Gaussian-mixture HMM over raw frame features."""

import numpy as np
import pytest
from scipy.stats import norm

from manipulation_primitives.core.config import HmmConfig
from manipulation_primitives.core.entities import Topology
from manipulation_primitives.core.exceptions import ArgumentException, NonFiniteValueException
from manipulation_primitives.providers.gaussian_hmm import (
    VARIANCE_FLOOR, GaussianHmm, gaussian_baum_welch, gaussian_forward_loglik, raw_features,
    select_gaussian_model,
)

from .conftest import make_trial


def _two_regime_sequences(rng, count=6, length=40):
    sequences = []
    for _ in range(count):
        first = rng.normal([0.0, 1.0], 0.3, size=(length // 2, 2))
        second = rng.normal([3.0, -1.0], 0.3, size=(length - length // 2, 2))
        sequences.append(np.vstack([first, second]))
    return sequences


class TestRawFeatures:
    def test_reduced_and_full_dimensions(self):
        F = np.zeros((51, 18))
        F[:, 0], F[:, 1] = 3.0, 4.0
        trial = make_trial(F=F)
        reduced = raw_features(trial, "reduced")
        assert reduced.shape == (51, 8)
        assert reduced[0, 6] == pytest.approx(5.0)
        assert raw_features(trial, "full").shape == (51, 32)

    def test_decimation(self):
        assert raw_features(make_trial(), "reduced", decimate=5).shape == (11, 8)

    def test_unknown_mode(self):
        with pytest.raises(ArgumentException):
            raw_features(make_trial(), "wide")


class TestGaussianForward:
    def test_single_state_single_component(self):
        model = GaussianHmm(Topology.ERGODIC, [1.0], [[1.0]], [[1.0]], [[[0.5, -1.0]]], [[[2.0, 0.25]]])
        frames = np.array([[0.0, 0.0], [1.0, -1.5], [0.5, -1.0]])
        expected = np.sum(norm.logpdf(frames, loc=[0.5, -1.0], scale=np.sqrt([2.0, 0.25])))
        assert gaussian_forward_loglik(model, frames) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        model = GaussianHmm(Topology.ERGODIC, [1.0], [[1.0]], [[1.0]], [[[0.0]]], [[[1.0]]])
        with pytest.raises(ArgumentException):
            gaussian_forward_loglik(model, np.zeros((3, 2)))

    def test_variance_below_floor_rejected(self):
        with pytest.raises(ArgumentException):
            GaussianHmm(Topology.ERGODIC, [1.0], [[1.0]], [[1.0]], [[[0.0]]], [[[1e-9]]])


class TestGaussianBaumWelch:
    def test_single_state_closed_form(self):
        rng = np.random.default_rng(0)
        sequences = [rng.normal(size=(20, 3)), rng.normal(loc=1.0, size=(15, 3))]
        model = gaussian_baum_welch(sequences, 1, 1, Topology.BAKIS, seed=1).model
        frames = np.vstack(sequences)
        np.testing.assert_allclose(model.means[0, 0], frames.mean(axis=0), rtol=1e-9)
        np.testing.assert_allclose(model.variances[0, 0], frames.var(axis=0), rtol=1e-9)

    def test_recovers_known_mean(self):
        rng = np.random.default_rng(3)
        true_mean = np.array([2.0, -0.5])
        sequences = [rng.normal(true_mean, 1.0, size=(50, 2)) for _ in range(4)]
        model = gaussian_baum_welch(sequences, 1, 1, seed=0).model
        standard_error = 1.0 / np.sqrt(200)
        assert np.all(np.abs(model.means[0, 0] - true_mean) <= 3 * standard_error)

    def test_constant_input_stays_finite(self):
        sequences = [np.full((30, 4), 2.5), np.full((25, 4), 2.5)]
        result = gaussian_baum_welch(sequences, 2, 2, Topology.ERGODIC, max_iter=10, seed=4)
        model = result.model
        assert np.isfinite(result.log_likelihood)
        assert not np.any(np.isnan(model.means))
        np.testing.assert_allclose(model.variances, VARIANCE_FLOOR)

    def test_log_likelihood_never_decreases(self):
        sequences = _two_regime_sequences(np.random.default_rng(12))
        result = gaussian_baum_welch(sequences, 3, 2, Topology.ERGODIC, max_iter=25, tol=0.0, seed=2)
        assert np.all(np.diff(result.history) >= -1e-9)
        np.testing.assert_allclose(result.model.weights.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(result.model.A.sum(axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_raw_log_likelihood_never_decreases(self, seed):
        sequences = _two_regime_sequences(np.random.default_rng(200 + seed), count=5, length=30)
        topology = Topology.BAKIS if seed % 2 else Topology.ERGODIC
        result = gaussian_baum_welch(sequences, 3, 2, topology, max_iter=25, tol=0.0, seed=seed)
        assert len(result.raw_history) >= 2
        assert np.all(np.diff(result.raw_history) >= -1e-9)

    def test_bakis_zeros_preserved(self):
        sequences = _two_regime_sequences(np.random.default_rng(1))
        model = gaussian_baum_welch(sequences, 4, 1, Topology.BAKIS, max_iter=10, seed=0).model
        assert np.all(np.tril(model.A, k=-1) == 0.0)
        assert np.all(np.triu(model.A, k=3) == 0.0)

    def test_rejects_non_finite_frames(self):
        frames = np.zeros((5, 2))
        frames[2, 1] = np.nan
        with pytest.raises(NonFiniteValueException):
            gaussian_baum_welch([frames], 1, 1)

    def test_rejects_empty_sequence(self):
        with pytest.raises(ArgumentException):
            gaussian_baum_welch([np.zeros((0, 2))], 1, 1)


class TestSelectGaussianModel:
    def test_selection_within_range(self):
        sequences = _two_regime_sequences(np.random.default_rng(6), count=4, length=20)
        config = HmmConfig(raw_max_iter=10)
        best = select_gaussian_model(sequences, "Pour", n_range=[1, 2], topologies=["bakis"], restarts=1,
                                     n_mixtures=1, config=config, seed=3)
        assert best.n_states in (1, 2)
        assert best.model.n_features == 2
        two_regimes = gaussian_forward_loglik(best.model, sequences[0])
        assert np.isfinite(two_regimes)
