"""Tests for the per-action model bank: classification, persistence and training."""

import numpy as np
import pytest

from manipulation_primitives.core.entities import Topology, TokenSequence
from manipulation_primitives.core.exceptions import (
    BankKindException, DataRepositoryException, IncompleteBankException, MissingActionException, SchemaException,
)
from manipulation_primitives.providers.discrete_hmm import DiscreteHmm, Vocabulary
from manipulation_primitives.providers.gaussian_hmm import GaussianHmm
from manipulation_primitives.providers.model_bank import (
    ActionModelBank, ModelInfo, ModelTrainer, classify, load_bank, save_bank,
)

from .conftest import make_trial


def _single_state(emissions):
    return DiscreteHmm(Topology.BAKIS, [1.0], [[1.0]], [emissions])


@pytest.fixture
def toy_bank():
    bank = ActionModelBank(kind="discrete", vocabulary=Vocabulary(("Gh", "Gl")), required_actions=("A", "B"))
    bank.add("A", _single_state([0.8, 0.1, 0.1]), ModelInfo(Topology.BAKIS, 1, -5.0, 3))
    bank.add("B", _single_state([0.1, 0.8, 0.1]), ModelInfo(Topology.BAKIS, 1, -9.0, 4))
    return bank


@pytest.fixture
def small_search(fresh_config):
    for key, value in (("hmm.n_min", 1), ("hmm.n_max", 2), ("hmm.restarts", 1), ("hmm.max_iter", 15),
                       ("hmm.raw_n_min", 1), ("hmm.raw_n_max", 1), ("hmm.raw_restarts", 1),
                       ("hmm.mixtures", 1), ("hmm.raw_decimate", 1)):
        fresh_config.set_value(key, value)
    return fresh_config


class TestClassify:
    def test_maximum_likelihood(self, toy_bank):
        label, scores = classify(toy_bank, TokenSequence.from_names(["Gh", "Gh"]))
        assert label == "A"
        assert scores["A"] == pytest.approx(2 * np.log(0.8))
        assert toy_bank.classify(["Gl", "Gl", "Gh"])[0] == "B"

    def test_unknown_token_uses_unknown_column(self, toy_bank):
        _, scores = toy_bank.classify(["Wz+"])
        assert scores["A"] == pytest.approx(np.log(0.1))

    def test_ties_go_to_first_label(self):
        bank = ActionModelBank(vocabulary=Vocabulary(("Gl",)), required_actions=("Zeta", "Alpha"))
        for action in ("Zeta", "Alpha"):
            bank.add(action, _single_state([0.5, 0.5]), ModelInfo(Topology.BAKIS, 1, -1.0))
        assert bank.classify(["Gl"])[0] == "Alpha"

    def test_incomplete_bank(self, toy_bank):
        toy_bank.required_actions = ("A", "B", "C")
        assert toy_bank.missing_actions() == ["C"]
        with pytest.raises(IncompleteBankException):
            toy_bank.classify(["Gh"])


class TestPersistence:
    def test_discrete_round_trip(self, toy_bank, tmp_path):
        path = tmp_path / "toy.bank"
        save_bank(toy_bank, path)
        loaded = load_bank(path)
        loaded.required_actions = ("A", "B")
        assert loaded.kind == "discrete"
        assert loaded.vocabulary.tokens == ("Gh", "Gl")
        assert loaded.actions == ["A", "B"]
        assert loaded.info["B"].n_sequences == 4
        assert loaded.info["A"].log_likelihood == -5.0
        np.testing.assert_array_equal(loaded.models["A"].B, toy_bank.models["A"].B)
        sequence = ["Gl", "Gh", "Gl"]
        assert loaded.classify(sequence) == toy_bank.classify(sequence)

    def test_gaussian_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        model = GaussianHmm(Topology.ERGODIC, [0.3, 0.7], [[0.6, 0.4], [0.2, 0.8]],
                            [[0.5, 0.5], [1.0, 0.0]], rng.normal(size=(2, 2, 3)),
                            rng.uniform(0.5, 2.0, size=(2, 2, 3)))
        bank = ActionModelBank(kind="gaussian", feature_mode="full", decimate=3, required_actions=("Pour",))
        bank.add("Pour", model, ModelInfo(Topology.ERGODIC, 2, -123.25, 6))
        save_bank(bank, tmp_path / "raw.bank")
        loaded = load_bank(tmp_path / "raw.bank")
        assert (loaded.feature_mode, loaded.decimate) == ("full", 3)
        np.testing.assert_array_equal(loaded.models["Pour"].means, model.means)
        np.testing.assert_array_equal(loaded.models["Pour"].variances, model.variances)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "bad.bank"
        path.write_text("something-else 1\nkind discrete\n", encoding="utf-8")
        with pytest.raises(SchemaException):
            load_bank(path)

    def test_truncated_file(self, toy_bank, tmp_path):
        path = tmp_path / "cut.bank"
        save_bank(toy_bank, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        path.write_text("\n".join(lines[:-3]) + "\n", encoding="utf-8")
        with pytest.raises(SchemaException):
            load_bank(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataRepositoryException):
            load_bank(tmp_path / "absent.bank")


class TestBankKind:
    @pytest.fixture
    def raw_bank(self):
        model = GaussianHmm(Topology.ERGODIC, [1.0], [[1.0]], [[1.0]], np.zeros((1, 1, 8)), np.ones((1, 1, 8)))
        bank = ActionModelBank(kind="gaussian", required_actions=("Pour",))
        bank.add("Pour", model, ModelInfo(Topology.ERGODIC, 1, -1.0, 1))
        return bank

    def test_token_bank_rejects_raw_trial(self, toy_bank):
        with pytest.raises(BankKindException, match="raw trial"):
            toy_bank.classify(make_trial(action="A"))

    def test_raw_bank_rejects_token_sequence(self, raw_bank):
        sequence = TokenSequence.from_names(["Gl", "Rl"], "p1", "s1", "Pour")
        with pytest.raises(BankKindException, match="token sequence p1"):
            raw_bank.classify(sequence)
        with pytest.raises(BankKindException):
            raw_bank.classify(["Gl", "Rl"])

    def test_raw_bank_checks_feature_width(self, raw_bank):
        with pytest.raises(BankKindException, match="8 features"):
            raw_bank.classify(np.zeros((10, 3)))
        assert raw_bank.classify(make_trial())[0] == "Pour"

    def test_mismatch_is_a_data_error(self, raw_bank):
        with pytest.raises(BankKindException) as info:
            raw_bank.classify(TokenSequence.from_names(["Gl"]))
        assert info.value.exit_code == 3


class TestModelTrainer:
    def _sequences(self):
        pour = [["Gl", "Gm", "Rm", "Rl"], ["Gl", "Gm", "Gh", "Rh", "Rm", "Rl"], ["Gl", "Rl"]]
        stir = [["Wz+", "Wz-", "Wz+"], ["Wz+", "Wz-", "Wz+", "Wz-"], ["Wz-", "Wz+"]]
        sequences = [TokenSequence.from_names(names, f"p{i}", "s1", "Pour") for i, names in enumerate(pour)]
        sequences += [TokenSequence.from_names(names, f"s{i}", "s1", "Stir") for i, names in enumerate(stir)]
        return sequences

    def test_build_bank_classifies_training_data(self, small_search):
        sequences = self._sequences() + [TokenSequence((), "empty", "s1", "Pour")]
        bank = ModelTrainer(small_search, ("Pour", "Stir")).build_bank(sequences, seed=1, jobs=1)
        assert bank.actions == ["Pour", "Stir"]
        assert bank.info["Pour"].n_sequences == 3
        for sequence in self._sequences():
            assert bank.classify(sequence)[0] == sequence.action

    def test_missing_action(self, small_search):
        stir_only = [s for s in self._sequences() if s.action == "Stir"]
        with pytest.raises(MissingActionException, match="Pour"):
            ModelTrainer(small_search, ("Pour", "Stir")).build_bank(stir_only, seed=1, jobs=1)

    def test_build_raw_bank(self, small_search):
        rng = np.random.default_rng(3)
        trials = []
        for k in range(3):
            v = rng.normal(0.0, 0.05, size=(51, 3))
            v[:, 0] += 0.5
            trials.append(make_trial(trial_id=f"p{k}", action="Pour", v=v))
            w = rng.normal(0.0, 0.05, size=(51, 3))
            w[:, 2] += 1.0
            trials.append(make_trial(trial_id=f"s{k}", action="Stir", v=rng.normal(0.0, 0.05, size=(51, 3)), w=w))
        bank = ModelTrainer(small_search, ("Pour", "Stir")).build_raw_bank(trials, seed=2, jobs=1)
        assert bank.kind == "gaussian"
        for trial in trials:
            assert bank.classify(trial)[0] == trial.action_label
