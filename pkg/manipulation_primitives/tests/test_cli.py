"""End-to-end tests of the command line on a small synthetic dataset."""

import pytest

from manipulation_primitives.core.exceptions import EXIT_DATA, EXIT_SUCCESS, EXIT_USAGE
from manipulation_primitives import main as cli
from manipulation_primitives.main import main
from manipulation_primitives.providers.evaluator import read_fold_scores
from manipulation_primitives.providers.model_bank import load_bank
from manipulation_primitives.providers.trial_repository import levels_path_for, read_levels, read_sequences

SMALL_RUN = """\
hmm.n_min = 1
hmm.n_max = 2
hmm.restarts = 1
hmm.max_iter = 10
hmm.raw_n_min = 1
hmm.raw_n_max = 1
hmm.raw_restarts = 1
hmm.raw_max_iter = 5
hmm.mixtures = 1
eval.test_subjects = s2
system.log_level = WARNING
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Dataset, sequences and bank shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "small.conf"
    config.write_text(SMALL_RUN, encoding="utf-8")
    base = ["--config", str(config), "--seed", "5"]
    assert main(base + ["synth", str(root / "data"), "--subjects", "2", "--trials", "1"]) == EXIT_SUCCESS
    assert main(base + ["extract", str(root / "data"), str(root / "seqs.txt")]) == EXIT_SUCCESS
    assert main(base + ["train", str(root / "seqs.txt"), str(root / "tokens.bank")]) == EXIT_SUCCESS
    assert main(base + ["train", str(root / "data"), str(root / "raw.bank"), "--raw"]) == EXIT_SUCCESS
    return root, base


class TestUsageErrors:
    def test_missing_command(self, capsys):
        assert main([]) == EXIT_USAGE
        assert "ERROR[E_USAGE]" in capsys.readouterr().err

    def test_unknown_option(self, capsys):
        assert main(["synth", "out", "--bogus"]) == EXIT_USAGE
        assert "ERROR[E_USAGE]" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        config = tmp_path / "bad.conf"
        config.write_text("extraction.nonsense = 1\n", encoding="utf-8")
        assert main(["--config", str(config), "ttest", "a", "b"]) == EXIT_USAGE
        assert "ERROR[E_CONFIG]" in capsys.readouterr().err

    def test_unexpected_error_is_reported(self, monkeypatch, capsys):
        def broken(args, config):
            raise RuntimeError("disk on fire")

        monkeypatch.setitem(cli.COMMANDS, "ttest", broken)
        assert main(["ttest", "a", "b"]) == 1
        err = capsys.readouterr().err
        assert "ERROR[E_INTERNAL] Unexpected RuntimeError: disk on fire" in err
        assert "Traceback" not in err

    def test_missing_bank_is_a_data_error(self, tmp_path, capsys):
        sequences = tmp_path / "seqs.txt"
        sequences.write_text("t1,s1,Pour\tGl Gh\n", encoding="utf-8")
        assert main(["predict", str(tmp_path / "absent.bank"), str(sequences)]) == EXIT_DATA
        assert "ERROR[E_IO]" in capsys.readouterr().err


class TestPipeline:
    def test_synth_outputs(self, workspace):
        root, _ = workspace
        assert (root / "data" / "manifest.tsv").exists()
        assert len(list((root / "data").glob("*.csv"))) == 16

    def test_extract_outputs(self, workspace):
        root, _ = workspace
        sequences = read_sequences(root / "seqs.txt")
        assert len(sequences) == 16
        assert all(len(s) > 0 for s in sequences)
        force, bend = read_levels(levels_path_for(root / "seqs.txt"))
        assert force.low < force.mid < force.high
        assert bend.A > 0

    def test_train_bank(self, workspace):
        root, _ = workspace
        bank = load_bank(root / "tokens.bank")
        assert bank.kind == "discrete"
        assert bank.is_complete()
        assert all(info.n_sequences == 1 for info in bank.info.values())

    def test_predict_sequences(self, workspace, capsys):
        root, base = workspace
        assert main(base + ["predict", str(root / "tokens.bank"), str(root / "seqs.txt")]) == EXIT_SUCCESS
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 16
        assert lines[0].startswith("s1_CloseCabinet_01\t")

    def test_predict_trial_needs_levels(self, workspace, capsys):
        root, base = workspace
        trial = root / "data" / "s1_Pour_01.csv"
        assert main(base + ["predict", str(root / "tokens.bank"), str(trial)]) == EXIT_USAGE
        capsys.readouterr()
        levels = levels_path_for(root / "seqs.txt")
        assert main(base + ["predict", str(root / "tokens.bank"), str(trial), "--levels", str(levels)]) == 0
        assert capsys.readouterr().out.startswith("s1_Pour_01\t")

    def test_eval_single_split(self, workspace, capsys):
        root, base = workspace
        report = root / "single"
        assert main(base + ["eval", str(root / "seqs.txt"), str(report), "--bank", str(root / "tokens.bank")]) == 0
        assert "overall F1" in capsys.readouterr().out
        folds = read_fold_scores(report)
        assert list(folds["test_subjects"]) == ["s2"]
        assert folds["n_test"].iloc[0] == 8

    def test_eval_folds_and_ttest(self, workspace, capsys):
        root, base = workspace
        a, b = root / "folds_a", root / "folds_b"
        for out in (a, b):
            assert main(base + ["eval", str(root / "seqs.txt"), str(out), "--folds", "s2;s1"]) == EXIT_SUCCESS
        capsys.readouterr()
        assert main(base + ["ttest", str(a), str(b)]) == EXIT_SUCCESS
        out = capsys.readouterr().out
        assert "t = 0.0000" in out
        assert "df = 1" in out
        assert "not significant" in out

    def test_ttest_fold_mismatch(self, workspace, capsys):
        root, base = workspace
        single, folds = root / "mismatch_single", root / "mismatch_folds"
        main(base + ["eval", str(root / "seqs.txt"), str(single), "--bank", str(root / "tokens.bank")])
        main(base + ["eval", str(root / "seqs.txt"), str(folds), "--folds", "s2;s1"])
        capsys.readouterr()
        assert main(base + ["ttest", str(single), str(folds)]) == EXIT_DATA
        assert "ERROR[E_FOLDS]" in capsys.readouterr().err

    def test_raw_baseline(self, workspace, capsys):
        root, base = workspace
        bank_path = root / "raw.bank"
        assert load_bank(bank_path).kind == "gaussian"
        report = root / "raw_report"
        assert main(base + ["eval", str(root / "data"), str(report), "--bank", str(bank_path), "--raw"]) == 0
        assert (report / "confusion.pgm").exists()

    def test_raw_bank_rejects_token_sequences(self, workspace, capsys):
        root, base = workspace
        assert main(base + ["predict", str(root / "raw.bank"), str(root / "seqs.txt")]) == EXIT_DATA
        assert "ERROR[E_BANK_KIND]" in capsys.readouterr().err
        report = root / "mismatch_report"
        assert main(base + ["eval", str(root / "seqs.txt"), str(report), "--bank", str(root / "raw.bank")]) == 3
        assert "ERROR[E_BANK_KIND]" in capsys.readouterr().err

    def test_token_bank_rejects_raw_input(self, workspace, capsys):
        root, base = workspace
        report = root / "raw_on_tokens"
        assert main(base + ["eval", str(root / "data"), str(report), "--bank", str(root / "tokens.bank"),
                            "--raw"]) == EXIT_DATA
        assert "ERROR[E_BANK_KIND]" in capsys.readouterr().err
