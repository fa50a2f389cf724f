"""Command-line entry point for the manipulation primitives pipeline."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ACTION_LABELS
from .core.config import ConfigurationManager
from .core.exceptions import (
    PrimitiveSystemException, UsageException, DataException, EXIT_SUCCESS,
)
from .core.logging_service import LoggingService, configure_logging
from .providers.action_synthesizer import ActionSynthesizer
from .providers.evaluator import Evaluator, FoldResult, compare_reports, split_by_subjects
from .providers.model_bank import ModelTrainer, load_bank, save_bank
from .providers.primitive_extractor import PrimitiveExtractor, token_histogram
from .providers.profile_provider import load_profile_set
from .providers.signal_processor import resample
from .providers.trial_repository import (
    TrialRepository, load_trial, read_levels, read_sequences, write_levels, write_sequences, levels_path_for,
)

logger = LoggingService("cli")


class CommandParser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting, so usage errors share the error line format."""

    def error(self, message):
        raise UsageException(message)


def build_parser() -> CommandParser:
    parser = CommandParser(prog="manipulation-primitives",
                           description="Primitive-based manipulation action recognition")
    parser.add_argument("--config", help="flat 'section.key = value' configuration file")
    parser.add_argument("--seed", type=int, help="master seed (overrides system.seed)")
    parser.add_argument("--jobs", type=int, help="worker processes (overrides system.jobs)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    commands = parser.add_subparsers(dest="command", parser_class=CommandParser)
    commands.required = True

    synth = commands.add_parser("synth", help="generate a synthetic labeled dataset")
    synth.add_argument("out_dir")
    synth.add_argument("--subjects", type=int)
    synth.add_argument("--trials", type=int, help="trials per action and subject")
    synth.add_argument("--noise-scale", type=float, default=1.0)

    extract = commands.add_parser("extract", help="extract token sequences from a dataset")
    extract.add_argument("dataset_dir")
    extract.add_argument("out_file")

    train = commands.add_parser("train", help="train a per-action model bank")
    train.add_argument("source", help="sequence file, or dataset directory with --raw")
    train.add_argument("out_bank")
    train.add_argument("--split", choices=["train", "all"], default="train")
    train.add_argument("--raw", action="store_true", help="Gaussian HMMs over raw frame features")

    predict = commands.add_parser("predict", help="classify sequences or a single trial")
    predict.add_argument("bank")
    predict.add_argument("source", help="sequence file or trial CSV")
    predict.add_argument("--levels", help="levels file for trial CSVs and discrete banks")

    evaluate = commands.add_parser("eval", help="score a bank or run fold evaluation")
    evaluate.add_argument("source", help="sequence file, or dataset directory with --raw")
    evaluate.add_argument("report_dir")
    evaluate.add_argument("--bank", help="trained bank (single split)")
    evaluate.add_argument("--folds", help="retrain per fold, e.g. 's4,s5;s1,s2'")
    evaluate.add_argument("--split", choices=["test", "train"], default="test")
    evaluate.add_argument("--raw", action="store_true")

    ttest = commands.add_parser("ttest", help="paired t-test over the fold scores of two reports")
    ttest.add_argument("report_a")
    ttest.add_argument("report_b")
    ttest.add_argument("--metric", choices=["overall_f1", "macro_f1"], default="overall_f1")
    return parser


def _configure(args) -> ConfigurationManager:
    config = ConfigurationManager.get_instance()
    config.load_from_environment()
    if args.config:
        config.load_from_file(args.config)
    if args.seed is not None:
        config.set_value("system.seed", args.seed)
    if args.jobs is not None:
        config.set_value("system.jobs", args.jobs)
    if args.log_level:
        config.set_value("system.log_level", args.log_level)
    config.validate_configuration()
    configure_logging(config, force=True)
    return config


def _training_items(items: Sequence, split: str, config: ConfigurationManager) -> list:
    if split == "all":
        return list(items)
    train, _ = split_by_subjects(items, config.eval.test_subject_set())
    return train


def _raw_trials(dataset_dir: str, config: ConfigurationManager) -> list:
    return [trial for _, trial in TrialRepository(dataset_dir).load_dataset(config.signal.rate)]


def cmd_synth(args, config: ConfigurationManager) -> int:
    synthesizer = ActionSynthesizer(config)
    dataset = synthesizer.generate(noise_scale=args.noise_scale, n_subjects=args.subjects,
                                   trials_per_action=args.trials)
    count = synthesizer.write(dataset, args.out_dir)
    print(f"{count} trials written to {args.out_dir}")
    return EXIT_SUCCESS


def cmd_extract(args, config: ConfigurationManager) -> int:
    loaded = TrialRepository(args.dataset_dir).load_dataset(config.signal.rate)
    training = [trial for row, trial in loaded if row.split == "train"]
    if not training:
        raise DataException(f"Dataset {args.dataset_dir} has no trials flagged 'train' for level estimation")

    extractor = PrimitiveExtractor(config, load_profile_set(config.profile))
    force, bend = extractor.fit_levels(training)
    sequences = extractor.extract_many([trial for _, trial in loaded], config.system.jobs)
    write_sequences(sequences, args.out_file)
    write_levels(force, bend, levels_path_for(args.out_file))

    histogram = token_histogram(sequences)
    print(f"{len(sequences)} sequences, {sum(histogram.values())} tokens, {len(histogram)} distinct")
    for name, count in histogram.items():
        print(f"{name}\t{count}")
    return EXIT_SUCCESS


def cmd_train(args, config: ConfigurationManager) -> int:
    trainer = ModelTrainer(config, ACTION_LABELS)
    if args.raw:
        trials = _training_items(_raw_trials(args.source, config), args.split, config)
        bank = trainer.build_raw_bank([resample(t, config.signal.rate) for t in trials])
    else:
        bank = trainer.build_bank(_training_items(read_sequences(args.source), args.split, config))
    save_bank(bank, args.out_bank)
    for action in bank.actions:
        info = bank.info[action]
        print(f"{action}\t{info.topology.value}\tN={info.n_states}\tloglik={info.log_likelihood:.6g}")
    return EXIT_SUCCESS


def cmd_predict(args, config: ConfigurationManager) -> int:
    bank = load_bank(args.bank)
    source = Path(args.source)
    if source.suffix.lower() == ".csv":
        trial = resample(load_trial(source, config.signal.rate), config.signal.rate)
        if bank.kind == "discrete":
            if not args.levels:
                raise UsageException("--levels is required to classify a trial with a token bank")
            force, bend = read_levels(args.levels)
            extractor = PrimitiveExtractor(config, load_profile_set(config.profile), force, bend)
            items = [extractor.extract(trial)]
        else:
            items = [trial]
    else:
        items = read_sequences(source)

    for item in items:
        label, _ = bank.classify(item)
        print(f"{getattr(item, 'trial_id', None) or getattr(item, 'id', '')}\t{label}")
    return EXIT_SUCCESS


def cmd_eval(args, config: ConfigurationManager) -> int:
    evaluator = Evaluator(config)
    if args.raw:
        items = [resample(t, config.signal.rate) for t in _raw_trials(args.source, config)]
    else:
        items = read_sequences(args.source)

    if args.folds or not args.bank:
        if args.split == "train":
            raise UsageException("--split train applies to single-bank evaluation only")
        folds = evaluator.cross_validate(items, evaluator.folds(args.folds), raw=args.raw)
    else:
        bank = load_bank(args.bank)
        subjects = config.eval.test_subject_set()
        if args.split == "train":
            subjects = sorted({item.subject for item in items} - set(subjects))
            result = evaluator.evaluate_subjects(bank, items, subjects)
        else:
            result = evaluator.evaluate(bank, items, subjects)
        folds = [FoldResult(1, tuple(sorted(subjects)), result)]

    pooled = evaluator.write(args.report_dir, folds, "Raw-feature recognition report" if args.raw
                             else "Primitive recognition report")
    print(f"overall F1 {pooled.report.overall_f1:.4f}")
    print(f"macro F1 {pooled.report.macro_f1:.4f}")
    return EXIT_SUCCESS


def cmd_ttest(args, config: ConfigurationManager) -> int:
    result = compare_reports(args.report_a, args.report_b, args.metric)
    alpha = config.eval.significance
    print(f"t = {result.t:.4f}")
    print(f"df = {result.df}")
    print(f"p = {result.p:.4g}")
    if result.zero_variance:
        print("note: differences have zero variance")
    verdict = "significant" if result.significant(alpha) else "not significant"
    print(f"difference is {verdict} at the {alpha:g} level")
    return EXIT_SUCCESS


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ttest": cmd_ttest,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        config = _configure(args)
        return COMMANDS[args.command](args, config)
    except PrimitiveSystemException as e:
        logger.log_error(e, {"operation": "cli"})
        print(f"ERROR[{e.error_code}] {e.message}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.log_error(e, {"operation": "cli"})
        print(f"ERROR[{PrimitiveSystemException.error_code}] Unexpected {type(e).__name__}: {e}", file=sys.stderr)
        return PrimitiveSystemException.exit_code


if __name__ == "__main__":
    sys.exit(main())
