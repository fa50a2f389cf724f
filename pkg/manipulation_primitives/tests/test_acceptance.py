"""Whole-pipeline checks on synthetic datasets with known labels."""

import re
import time

import pytest

from manipulation_primitives.core.config import ConfigurationManager
from manipulation_primitives.main import main
from manipulation_primitives.providers.action_synthesizer import ActionSynthesizer
from manipulation_primitives.providers.evaluator import evaluate_bank, split_by_subjects
from manipulation_primitives.providers.model_bank import ModelTrainer
from manipulation_primitives.providers.primitive_extractor import PrimitiveExtractor
from manipulation_primitives.providers.signal_processor import resample

pytestmark = pytest.mark.slow


def _token_f1(config, trials, test_subjects=("s4", "s5")) -> float:
    train, test = split_by_subjects(trials, test_subjects)
    extractor = PrimitiveExtractor(config)
    extractor.fit_levels(train)
    bank = ModelTrainer(config).build_bank(extractor.extract_many(train))
    return evaluate_bank(bank, extractor.extract_many(test)).report.overall_f1


def _raw_f1(config, trials, test_subjects=("s4", "s5")) -> float:
    rate = config.signal.rate
    train, test = split_by_subjects([resample(t, rate) for t in trials], test_subjects)
    bank = ModelTrainer(config).build_raw_bank(train)
    return evaluate_bank(bank, test).report.overall_f1


def _scaled(trial, c):
    return trial.with_channels(F=trial.F * c, b=trial.b * c)


def test_default_pipeline_runs_end_to_end_within_two_minutes(tmp_path, capsys):
    data, sequences, bank = tmp_path / "data", tmp_path / "seqs.txt", tmp_path / "tokens.bank"
    started = time.perf_counter()
    assert main(["synth", str(data)]) == 0
    assert main(["extract", str(data), str(sequences)]) == 0
    assert main(["train", str(sequences), str(bank)]) == 0
    assert main(["eval", str(sequences), str(tmp_path / "report"), "--bank", str(bank)]) == 0
    elapsed = time.perf_counter() - started

    assert elapsed < 120.0
    assert len((data / "manifest.tsv").read_text(encoding="utf-8").splitlines()) == 241
    overall = re.search(r"overall F1 ([0-9.]+)", capsys.readouterr().out)
    assert overall is not None
    assert float(overall.group(1)) >= 0.85


def test_token_recognition_on_default_dataset(fresh_config):
    dataset = ActionSynthesizer(fresh_config).generate()
    assert len(dataset) == 240

    assert _token_f1(fresh_config, dataset.trials) >= 0.85


def test_tokens_beat_raw_features_under_high_variability(fresh_config):
    for key in ("duration_jitter", "magnitude_jitter", "strength_jitter"):
        fresh_config.set_value(f"synth.{key}", 0.3)
    dataset = ActionSynthesizer(fresh_config).generate(noise_scale=2.0, trials_per_action=3)

    token_f1 = _token_f1(fresh_config, dataset.trials)
    raw_f1 = _raw_f1(fresh_config, dataset.trials)

    assert token_f1 >= raw_f1 + 0.05


@pytest.mark.parametrize("c", [0.5, 3.0, 10.0])
def test_sensor_gain_changes_no_sequence_or_prediction(fresh_config, c):
    fresh_config.set_value("hmm.n_max", 4)
    fresh_config.set_value("hmm.restarts", 1)
    dataset = ActionSynthesizer(fresh_config).generate(n_subjects=3, trials_per_action=1)
    train, test = split_by_subjects(dataset.trials, ["s3"])

    def run(train_trials, test_trials):
        extractor = PrimitiveExtractor(fresh_config)
        extractor.fit_levels(train_trials)
        train_seqs = extractor.extract_many(train_trials)
        test_seqs = extractor.extract_many(test_trials)
        bank = ModelTrainer(fresh_config).build_bank(train_seqs)
        return [s.names for s in train_seqs + test_seqs], evaluate_bank(bank, test_seqs).predictions

    base_sequences, base_predictions = run(train, test)
    sequences, predictions = run([_scaled(t, c) for t in train], [_scaled(t, c) for t in test])

    assert sequences == base_sequences
    assert list(predictions) == list(base_predictions)


def test_repeated_runs_are_byte_identical(tmp_path):
    config_file = tmp_path / "run.conf"
    config_file.write_text("hmm.n_min = 1\nhmm.n_max = 3\nhmm.restarts = 2\neval.test_subjects = s3\n",
                           encoding="utf-8")
    outputs = []
    for name in ("first", "second"):
        root = tmp_path / name
        base = ["--config", str(config_file), "--seed", "11"]
        assert main(base + ["synth", str(root / "data"), "--subjects", "3", "--trials", "1"]) == 0
        assert main(base + ["extract", str(root / "data"), str(root / "seqs.txt")]) == 0
        assert main(base + ["train", str(root / "seqs.txt"), str(root / "tokens.bank")]) == 0
        assert main(base + ["eval", str(root / "seqs.txt"), str(root / "report"),
                            "--bank", str(root / "tokens.bank")]) == 0
        ConfigurationManager.reset_instance()
        outputs.append(root)

    first, second = outputs
    for relative in ("seqs.txt", "seqs.txt.levels", "tokens.bank", "report/scores.tsv", "report/folds.tsv",
                     "report/confusion.tsv", "report/report.txt", "data/manifest.tsv",
                     "data/s2_Pour_01.csv"):
        assert (first / relative).read_bytes() == (second / relative).read_bytes(), relative
