"""Tests for the discrete HMM: vocabulary, forward recursion, Baum-Welch and selection."""

import itertools

import numpy as np
import pytest

from manipulation_primitives.config import BASE_SYMBOLS
from manipulation_primitives.core.config import HmmConfig
from manipulation_primitives.core.entities import Topology, TokenSequence
from manipulation_primitives.core.exceptions import ArgumentException, VocabularyException
from manipulation_primitives.providers.discrete_hmm import (
    DiscreteHmm, Vocabulary, baum_welch, build_vocabulary, candidate_seed, forward_loglik, holdout_split,
    sample_sequence, select_model, topology_mask,
)


def _brute_force_loglik(model, sequence):
    total = 0.0
    for path in itertools.product(range(model.n_states), repeat=len(sequence)):
        p = model.pi[path[0]] * model.B[path[0], sequence[0]]
        for t in range(1, len(sequence)):
            p *= model.A[path[t - 1], path[t]] * model.B[path[t], sequence[t]]
        total += p
    return np.log(total)


def _enumerated_probabilities(model, length, chunk=512):
    """P(sequence) for every sequence of ``length`` by summing over all state paths."""
    paths = np.array(list(itertools.product(range(model.n_states), repeat=length)))
    weights = model.pi[paths[:, 0]] * np.prod(model.A[paths[:, :-1], paths[:, 1:]], axis=1)
    sequences = np.array(list(itertools.product(range(model.n_symbols), repeat=length)))
    probabilities = np.empty(len(sequences))
    for start in range(0, len(sequences), chunk):
        block = sequences[start:start + chunk]
        emit = np.ones((len(paths), len(block)))
        for t in range(length):
            emit *= model.B[paths[:, t]][:, block[:, t]]
        probabilities[start:start + chunk] = weights @ emit
    return sequences, probabilities


def _random_model(rng):
    n_states = int(rng.integers(1, 5))
    n_symbols = int(rng.integers(2, 6))
    return DiscreteHmm(
        Topology.ERGODIC,
        rng.dirichlet(np.ones(n_states)),
        rng.dirichlet(np.ones(n_states), size=n_states),
        rng.dirichlet(np.ones(n_symbols), size=n_states),
    )


@pytest.fixture
def two_state_model():
    return DiscreteHmm(
        Topology.ERGODIC,
        pi=[0.6, 0.4],
        A=[[0.7, 0.3], [0.25, 0.75]],
        B=[[0.9, 0.1], [0.2, 0.8]],
    )


@pytest.fixture
def generator():
    return DiscreteHmm(
        Topology.ERGODIC,
        pi=[0.5, 0.5],
        A=[[0.9, 0.1], [0.2, 0.8]],
        B=[[0.8, 0.1, 0.1], [0.1, 0.1, 0.8]],
    )


class TestVocabulary:
    def test_two_tokens_plus_unknown(self):
        vocabulary = build_vocabulary([TokenSequence.from_names(["Gl", "Gh", "Gl"])])
        assert vocabulary.size == 3
        assert vocabulary.tokens == ("Gh", "Gl")
        assert vocabulary.unknown_id == 2

    def test_unseen_compound_maps_to_unknown(self):
        vocabulary = build_vocabulary([TokenSequence.from_names(["Vx+", "Gl"])])
        encoded = vocabulary.encode(TokenSequence.from_names(["Vx+&Vy+", "Gl"]))
        assert encoded.tolist() == [vocabulary.unknown_id, vocabulary.id_of("Gl")]

    def test_all_singletons(self):
        vocabulary = build_vocabulary([TokenSequence.from_names(list(BASE_SYMBOLS))])
        assert vocabulary.size == 25

    def test_rejects_unsorted_tokens(self):
        with pytest.raises(VocabularyException):
            Vocabulary(("Gl", "Gh"))

    def test_empty_training_set(self):
        with pytest.raises(ArgumentException):
            build_vocabulary([])


class TestTopology:
    def test_bakis_band(self):
        mask = topology_mask(4, Topology.BAKIS)
        expected = np.array([
            [1, 1, 1, 0],
            [0, 1, 1, 1],
            [0, 0, 1, 1],
            [0, 0, 0, 1],
        ], dtype=bool)
        np.testing.assert_array_equal(mask, expected)

    def test_ergodic_full(self):
        assert topology_mask(3, "ergodic").all()


class TestForward:
    def test_uniform_emissions(self):
        model = DiscreteHmm(Topology.ERGODIC, [1.0], [[1.0]], [[0.25] * 4])
        assert forward_loglik(model, [0, 3, 2, 1, 1]) == pytest.approx(5 * np.log(0.25), rel=1e-12)

    def test_matches_path_enumeration(self, two_state_model):
        for sequence in itertools.product(range(2), repeat=3):
            expected = _brute_force_loglik(two_state_model, sequence)
            assert forward_loglik(two_state_model, list(sequence)) == pytest.approx(expected, rel=1e-9)

    def test_random_models_match_path_enumeration(self):
        rng = np.random.default_rng(7)
        for n_states, n_symbols, length in ((3, 4, 5), (4, 5, 6)):
            pi = rng.dirichlet(np.ones(n_states))
            A = rng.dirichlet(np.ones(n_states), size=n_states)
            B = rng.dirichlet(np.ones(n_symbols), size=n_states)
            model = DiscreteHmm(Topology.ERGODIC, pi, A, B)
            sequence = rng.integers(0, n_symbols, size=length)
            assert forward_loglik(model, sequence) == pytest.approx(_brute_force_loglik(model, sequence), rel=1e-9)

    @pytest.mark.slow
    def test_fifty_random_models_against_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            model = _random_model(rng)
            for length in range(1, 7):
                sequences, probabilities = _enumerated_probabilities(model, length)
                assert probabilities.sum() == pytest.approx(1.0, abs=1e-9)
                computed = np.array([forward_loglik(model, sequence) for sequence in sequences])
                np.testing.assert_allclose(computed, np.log(probabilities), rtol=1e-9, atol=1e-12)

    def test_probabilities_sum_to_one(self):
        model = DiscreteHmm(
            Topology.ERGODIC,
            pi=[0.3, 0.7],
            A=[[0.5, 0.5], [0.1, 0.9]],
            B=[[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]],
        )
        total = sum(np.exp(forward_loglik(model, list(seq))) for seq in itertools.product(range(3), repeat=4))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_empty_sequence(self, two_state_model):
        assert forward_loglik(two_state_model, []) == 0.0

    def test_out_of_range_symbol(self, two_state_model):
        with pytest.raises(VocabularyException):
            forward_loglik(two_state_model, [0, 2])

    def test_rejects_non_stochastic_rows(self):
        with pytest.raises(ArgumentException):
            DiscreteHmm(Topology.ERGODIC, [1.0], [[0.9]], [[0.5, 0.5]])


class TestBaumWelch:
    def test_single_state_closed_form(self):
        sequences = [np.array([0, 0, 1]), np.array([2, 0])]
        result = baum_welch(sequences, 1, Topology.ERGODIC, n_symbols=4, smoothing=0.01, seed=3)
        counts = np.array([3, 1, 1, 0], dtype=float)
        expected = (counts + 0.01) / (counts.sum() + 4 * 0.01)
        np.testing.assert_allclose(result.model.B[0], expected, rtol=1e-9)
        assert result.model.A[0, 0] == pytest.approx(1.0)

    def test_log_likelihood_never_decreases(self, generator):
        rng = np.random.default_rng(11)
        sequences = [sample_sequence(generator, 15, rng) for _ in range(20)]
        result = baum_welch(sequences, 3, Topology.ERGODIC, 3, max_iter=50, tol=0.0, seed=5)
        assert np.all(np.diff(result.history) >= -1e-9)
        model = result.model
        for rows in (model.pi[None, :], model.A, model.B):
            np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_raw_log_likelihood_never_decreases(self, generator, seed):
        rng = np.random.default_rng(100 + seed)
        sequences = [sample_sequence(generator, int(rng.integers(8, 20)), rng) for _ in range(15)]
        topology = Topology.BAKIS if seed % 2 else Topology.ERGODIC
        result = baum_welch(sequences, 3, topology, 3, smoothing=0.0, max_iter=40, tol=0.0, seed=seed)
        assert len(result.raw_history) >= 2
        assert np.all(np.diff(result.raw_history) >= -1e-9)
        assert result.history == result.raw_history[:len(result.history)]

    def test_bakis_structural_zeros(self, generator):
        rng = np.random.default_rng(2)
        sequences = [sample_sequence(generator, 12, rng) for _ in range(10)]
        model = baum_welch(sequences, 4, Topology.BAKIS, 3, seed=1).model
        mask = topology_mask(4, Topology.BAKIS)
        assert np.all(model.A[~mask] == 0.0)
        assert model.pi.tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_bakis_warning_for_short_sequences(self):
        result = baum_welch([np.array([0, 1]), np.array([1, 1, 0])], 4, Topology.BAKIS, 2, seed=0)
        assert result.warnings
        assert np.isfinite(result.log_likelihood)

    def test_deterministic_under_seed(self, generator):
        rng = np.random.default_rng(4)
        sequences = [sample_sequence(generator, 10, rng) for _ in range(8)]
        a = baum_welch(sequences, 3, Topology.ERGODIC, 3, seed=[1, 2, 3])
        b = baum_welch(sequences, 3, Topology.ERGODIC, 3, seed=[1, 2, 3])
        np.testing.assert_array_equal(a.model.A, b.model.A)
        np.testing.assert_array_equal(a.model.B, b.model.B)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ArgumentException):
            baum_welch([np.array([0, 1]), np.array([], dtype=int)], 2, Topology.ERGODIC, 2)

    def test_recovers_generator_likelihood(self, generator):
        rng = np.random.default_rng(21)
        train = [sample_sequence(generator, 30, rng) for _ in range(60)]
        held_out = [sample_sequence(generator, 30, rng) for _ in range(30)]
        best = select_model(train, "Pour", 3, n_range=[2], topologies=["ergodic"], restarts=3, seed=9)
        tokens = sum(len(s) for s in held_out)
        trained = sum(forward_loglik(best.model, s) for s in held_out) / tokens
        reference = sum(forward_loglik(generator, s) for s in held_out) / tokens
        assert abs(trained - reference) <= 0.05 * abs(reference)


class TestSelectModel:
    def test_best_of_restarts(self, generator):
        rng = np.random.default_rng(5)
        sequences = [sample_sequence(generator, 10, rng) for _ in range(6)]
        config = HmmConfig(max_iter=20)
        best = select_model(sequences, "Stir", 3, n_range=[3], topologies=["bakis"], restarts=3,
                            config=config, seed=4)
        scores = [
            baum_welch(sequences, 3, Topology.BAKIS, 3, config.smoothing, config.max_iter, config.tol,
                       candidate_seed(4, "Stir", Topology.BAKIS, 3, r)).log_likelihood
            for r in range(3)
        ]
        assert best.score == pytest.approx(max(scores))
        assert best.n_states == 3 and best.topology is Topology.BAKIS

    def test_repeated_sequence_is_fit_best(self):
        sequences = [np.array([0, 1, 2, 0, 1, 2])] * 4
        best = select_model(sequences, "Spray", 4, n_range=[1, 3], topologies=["bakis", "ergodic"], restarts=2,
                            config=HmmConfig(max_iter=30), seed=0)
        single = baum_welch(sequences, 1, Topology.ERGODIC, 4, seed=0)
        assert best.score >= single.log_likelihood - 1e-9

    def test_heldout_selection_scores_validation_share(self, generator):
        rng = np.random.default_rng(8)
        sequences = [sample_sequence(generator, 10, rng) for _ in range(8)]
        config = HmmConfig(selection="heldout", holdout_fraction=0.25, max_iter=10)
        best = select_model(sequences, "Pour", 3, n_range=[2], topologies=["ergodic"], restarts=1,
                            config=config, seed=1)
        assert best.score != best.log_likelihood

    def test_empty_search_space(self):
        with pytest.raises(ArgumentException):
            select_model([np.array([0])], "Pour", 2, n_range=[], topologies=["bakis"], restarts=1)

    def test_holdout_split_partitions(self):
        train, valid = holdout_split(8, 0.25, np.random.default_rng(0))
        assert len(valid) == 2
        assert sorted(train + valid) == list(range(8))
        assert holdout_split(1, 0.25, np.random.default_rng(0)) == ([0], [])
