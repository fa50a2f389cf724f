"""
Evaluation provider.
Leave-subjects-out splits, confusion matrices, F1 reports, the one-sample
t-test used to compare feature sets and the report files the CLI writes.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from ..core.config import ConfigurationManager
from ..core.exceptions import (
    ArgumentException, DataException, FoldMismatchException, SchemaException, DataRepositoryException,
    PrimitiveSystemException, NumericException,
)
from ..core.logging_service import LoggingService
from .model_bank import ActionModelBank, ModelTrainer

logger = logging.getLogger(__name__)

ZERO_VARIANCE_T = 1e12
SCORES_FILE = "scores.tsv"
FOLDS_FILE = "folds.tsv"
CONFUSION_FILE = "confusion.tsv"
CONFUSION_IMAGE = "confusion.pgm"
REPORT_FILE = "report.txt"
PGM_CELL = 16
FOLDS_COLUMNS = ("fold", "test_subjects", "n_test", "macro_f1", "overall_f1")


def split_by_subjects(items: Sequence, test_subjects: Iterable[str]) -> Tuple[list, list]:
    """
    Partition trials or sequences by subject id.

    Args:
        items: Objects with a ``subject`` attribute, kept in input order
        test_subjects: Subjects held out for testing

    Returns:
        (train, test)

    Raises:
        ArgumentException: If the test set is empty, names a subject absent
            from the data or covers every subject
    """
    test_set = set(test_subjects)
    present = {item.subject for item in items}
    if not test_set:
        raise ArgumentException("Test subject set is empty")
    unknown = sorted(test_set - present)
    if unknown:
        raise ArgumentException(f"Unknown test subject(s): {', '.join(unknown)}", {"known": sorted(present)})
    if test_set >= present:
        raise ArgumentException("Test subjects cover every subject; the training split would be empty")
    train = [item for item in items if item.subject not in test_set]
    test = [item for item in items if item.subject in test_set]
    return train, test


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = truth and columns = prediction, labels sorted."""
    labels: Tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=int).reshape(len(self.labels), len(self.labels))
        if np.any(counts < 0):
            raise ArgumentException("Confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        labels = tuple(sorted(set(self.labels) | set(other.labels)))
        counts = np.zeros((len(labels), len(labels)), dtype=int)
        for cm in (self, other):
            index = [labels.index(label) for label in cm.labels]
            counts[np.ix_(index, index)] += cm.counts
        return ConfusionMatrix(labels, counts)


def confusion(predictions: Sequence[str], truths: Sequence[str],
              labels: Iterable[str] = ()) -> ConfusionMatrix:
    """Accumulate a confusion matrix; extra ``labels`` are included even without counts."""
    if len(predictions) != len(truths):
        raise ArgumentException(
            f"Prediction and truth lists differ in length ({len(predictions)} vs {len(truths)})")
    ordered = tuple(sorted(set(labels) | set(predictions) | set(truths)))
    position = {label: i for i, label in enumerate(ordered)}
    counts = np.zeros((len(ordered), len(ordered)), dtype=int)
    for predicted, truth in zip(predictions, truths):
        counts[position[truth], position[predicted]] += 1
    return ConfusionMatrix(ordered, counts)


@dataclass
class ScoreReport:
    """Per-class precision, recall, F1 and support plus macro and support-weighted F1."""
    labels: Tuple[str, ...]
    precision: Dict[str, float]
    recall: Dict[str, float]
    f1: Dict[str, float]
    support: Dict[str, int]
    macro_f1: float
    overall_f1: float


def _ratio(numerator: float, denominator: float) -> float:
    return float(numerator / denominator) if denominator else 0.0


def f1_report(cm: ConfusionMatrix) -> ScoreReport:
    """Scores of a confusion matrix; every 0/0 ratio counts as 0."""
    counts = cm.counts
    precision, recall, f1, support = {}, {}, {}, {}
    for i, label in enumerate(cm.labels):
        tp = counts[i, i]
        p = _ratio(tp, counts[:, i].sum())
        r = _ratio(tp, counts[i, :].sum())
        precision[label], recall[label] = p, r
        f1[label] = _ratio(2 * p * r, p + r)
        support[label] = int(counts[i, :].sum())

    macro = float(np.mean([f1[label] for label in cm.labels])) if cm.labels else 0.0
    total = sum(support.values())
    overall = _ratio(sum(f1[label] * support[label] for label in cm.labels), total)
    return ScoreReport(cm.labels, precision, recall, f1, support, macro, overall)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    mean: float
    sd: float
    zero_variance: bool = False

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p < alpha


def one_sample_ttest(differences: Sequence[float]) -> TTestResult:
    """
    Two-sided one-sample t-test of the differences against a zero mean.

    Identical differences have no variance: a zero mean gives t = 0, p = 1;
    any other mean gives t = +/-1e12 and p = 0.
    """
    values = np.asarray(differences, dtype=float)
    n = values.size
    if n < 2:
        raise ArgumentException(f"The t-test needs at least 2 differences, got {n}")
    if not np.all(np.isfinite(values)):
        raise NumericException("Differences contain non-finite values")

    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    df = n - 1
    scale = max(1.0, float(np.abs(values).max()))
    if sd <= 1e-12 * scale:
        if abs(mean) <= 1e-12 * scale:
            return TTestResult(0.0, df, 1.0, mean, sd, zero_variance=True)
        return TTestResult(float(np.sign(mean)) * ZERO_VARIANCE_T, df, 0.0, mean, sd, zero_variance=True)

    t = mean / (sd / np.sqrt(n))
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return TTestResult(float(t), df, p, mean, sd)


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Levenshtein distance between two token lists."""
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def edit_similarity(a: Sequence[str], b: Sequence[str]) -> float:
    """1 - Levenshtein distance / longer length; two empty sequences are identical."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(a, b) / longest


def _label_of(item) -> str:
    label = getattr(item, "action", None) or getattr(item, "action_label", None)
    if not label:
        raise DataException(f"Evaluation item {getattr(item, 'trial_id', getattr(item, 'id', '?'))} has no label")
    return label


@dataclass
class EvaluationResult:
    """Predictions of one bank on one test split."""
    predictions: List[str]
    truths: List[str]
    confusion: ConfusionMatrix
    report: ScoreReport
    test_subjects: Tuple[str, ...] = ()


@dataclass
class FoldResult:
    fold: int
    test_subjects: Tuple[str, ...]
    evaluation: EvaluationResult

    @property
    def report(self) -> ScoreReport:
        return self.evaluation.report


def evaluate_bank(bank: ActionModelBank, items: Sequence, labels: Iterable[str] = ()) -> EvaluationResult:
    """Classify every item and score the predictions."""
    if not items:
        raise DataException("Test split is empty")
    truths = [_label_of(item) for item in items]
    predictions = [bank.classify(item)[0] for item in items]
    cm = confusion(predictions, truths, labels or bank.required_actions)
    subjects = tuple(sorted({item.subject for item in items}))
    return EvaluationResult(predictions, truths, cm, f1_report(cm), subjects)


def _fold_worker(args) -> FoldResult:
    index, items, test_subjects, raw, config, seed = args
    train, test = split_by_subjects(items, test_subjects)
    trainer = ModelTrainer(config)
    if raw:
        bank = trainer.build_raw_bank(train, seed=seed, jobs=1)
    else:
        bank = trainer.build_bank(train, seed=seed, jobs=1)
    return FoldResult(index, tuple(sorted(test_subjects)), evaluate_bank(bank, test))


def run_folds(items: Sequence, folds: Sequence[Sequence[str]], raw: bool = False,
              config: Optional[ConfigurationManager] = None, seed: Optional[int] = None,
              jobs: int = 1) -> List[FoldResult]:
    """
    Train and evaluate once per fold; each fold names its test subjects.

    Folds run in parallel processes when ``jobs`` > 1 and results keep fold order.
    """
    if not folds:
        raise ArgumentException("At least one fold is required")
    config = config or ConfigurationManager.get_instance()
    seed = config.system.seed if seed is None else seed
    work = [(i, list(items), tuple(fold), raw, config, seed) for i, fold in enumerate(folds, start=1)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fold_worker, work))
    return [_fold_worker(item) for item in work]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise DataRepositoryException(f"Failed to write {path}: {str(e)}", {"path": str(path)})


def scores_table(report: ScoreReport) -> pd.DataFrame:
    rows = [{"label": label, "precision": report.precision[label], "recall": report.recall[label],
             "f1": report.f1[label], "support": report.support[label]} for label in report.labels]
    total = sum(report.support.values())
    rows.append({"label": "macro", "precision": np.nan, "recall": np.nan, "f1": report.macro_f1, "support": total})
    rows.append({"label": "overall", "precision": np.nan, "recall": np.nan, "f1": report.overall_f1,
                 "support": total})
    return pd.DataFrame(rows, columns=["label", "precision", "recall", "f1", "support"])


def confusion_table(cm: ConfusionMatrix) -> pd.DataFrame:
    frame = pd.DataFrame(cm.counts, index=list(cm.labels), columns=list(cm.labels))
    frame.index.name = "truth\\predicted"
    return frame


def confusion_pgm(cm: ConfusionMatrix, cell: int = PGM_CELL) -> str:
    """Plain (P2) grayscale image, one ``cell``-pixel square per entry; darker is more frequent."""
    k = len(cm.labels)
    peak = int(cm.counts.max()) if cm.counts.size else 0
    shades = np.full((k, k), 255, dtype=int)
    if peak > 0:
        shades = 255 - np.rint(255.0 * cm.counts / peak).astype(int)
    image = np.kron(shades, np.ones((cell, cell), dtype=int))
    lines = ["P2", f"# labels: {' '.join(cm.labels)}", f"{k * cell} {k * cell}", "255"]
    lines += [" ".join(str(v) for v in row) for row in image]
    return "\n".join(lines) + "\n"


def format_report(report: ScoreReport, cm: ConfusionMatrix, folds: Sequence[FoldResult] = (),
                  title: str = "Recognition report") -> str:
    width = max([len(label) for label in report.labels] + [8])
    lines = [title, "=" * len(title), ""]
    lines.append(f"{'action':<{width}}  precision  recall     f1  support")
    for label in report.labels:
        lines.append(f"{label:<{width}}  {report.precision[label]:9.4f}  {report.recall[label]:6.4f}  "
                     f"{report.f1[label]:5.4f}  {report.support[label]:7d}")
    lines += ["", f"macro F1:   {report.macro_f1:.4f}", f"overall F1: {report.overall_f1:.4f}",
              f"accuracy:   {cm.accuracy:.4f}", f"trials:     {cm.total}"]
    if folds:
        lines += ["", "folds:"]
        for fold in folds:
            lines.append(f"  {fold.fold}: test={','.join(fold.test_subjects)}  "
                         f"macro={fold.report.macro_f1:.4f}  overall={fold.report.overall_f1:.4f}")
    return "\n".join(lines) + "\n"


def write_reports(out_dir, folds: Sequence[FoldResult], title: str = "Recognition report") -> EvaluationResult:
    """
    Write ``scores.tsv``, ``folds.tsv``, ``confusion.tsv``, ``confusion.pgm`` and ``report.txt``.

    With several folds the scores and confusion matrix are pooled over folds.

    Returns:
        The pooled evaluation
    """
    if not folds:
        raise ArgumentException("No fold results to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataRepositoryException(f"Cannot create report directory {out_dir}: {str(e)}",
                                      {"path": str(out_dir)})

    cm = folds[0].evaluation.confusion
    predictions = list(folds[0].evaluation.predictions)
    truths = list(folds[0].evaluation.truths)
    for fold in folds[1:]:
        cm = cm + fold.evaluation.confusion
        predictions += fold.evaluation.predictions
        truths += fold.evaluation.truths
    report = f1_report(cm)

    _write(out_dir / SCORES_FILE, scores_table(report).to_csv(sep="\t", index=False, float_format="%.6f",
                                                              lineterminator="\n"))
    _write(out_dir / CONFUSION_FILE, confusion_table(cm).to_csv(sep="\t", lineterminator="\n"))
    _write(out_dir / CONFUSION_IMAGE, confusion_pgm(cm))
    fold_lines = ["\t".join(FOLDS_COLUMNS)]
    for fold in folds:
        fold_lines.append("\t".join([str(fold.fold), ",".join(fold.test_subjects),
                                     str(fold.evaluation.confusion.total),
                                     _fmt(fold.report.macro_f1), _fmt(fold.report.overall_f1)]))
    _write(out_dir / FOLDS_FILE, "\n".join(fold_lines) + "\n")
    _write(out_dir / REPORT_FILE, format_report(report, cm, folds if len(folds) > 1 else (), title))
    return EvaluationResult(predictions, truths, cm, report,
                            tuple(sorted({s for fold in folds for s in fold.test_subjects})))


def read_fold_scores(path) -> pd.DataFrame:
    """Read ``folds.tsv`` from a report directory (or the file itself)."""
    path = Path(path)
    if path.is_dir():
        path = path / FOLDS_FILE
    if not path.exists():
        raise DataRepositoryException(f"Fold scores not found: {path}", {"path": str(path)})
    try:
        frame = pd.read_csv(path, sep="\t", dtype={"test_subjects": str}, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataRepositoryException(f"Failed to read fold scores {path}: {str(e)}", {"path": str(path)})
    for column in FOLDS_COLUMNS:
        if column not in frame.columns:
            raise SchemaException(f"{path}: missing column '{column}'")
    return frame


def compare_reports(report_a, report_b, metric: str = "overall_f1") -> TTestResult:
    """
    Paired t-test over the fold scores of two reports (a minus b).

    Raises:
        FoldMismatchException: If the reports do not share their fold structure
    """
    a, b = read_fold_scores(report_a), read_fold_scores(report_b)
    if len(a) != len(b) or list(a["test_subjects"]) != list(b["test_subjects"]):
        raise FoldMismatchException(
            f"Reports have different folds ({len(a)} vs {len(b)})",
            {"a": list(a["test_subjects"]), "b": list(b["test_subjects"])})
    return one_sample_ttest((a[metric].to_numpy(dtype=float) - b[metric].to_numpy(dtype=float)).tolist())


class Evaluator:
    """
    Evaluation pipeline bound to the configuration.
    Runs single-split or fold evaluations and writes the report directory.
    """

    def __init__(self, config: Optional[ConfigurationManager] = None):
        self.config = config or ConfigurationManager.get_instance()
        self.logger = LoggingService("evaluation")

    def folds(self, explicit: Optional[str] = None) -> List[Tuple[str, ...]]:
        if explicit:
            self.config.set_value("eval.folds", explicit)
        folds = self.config.eval.fold_list()
        return folds or [tuple(self.config.eval.test_subject_set())]

    def evaluate(self, bank: ActionModelBank, items: Sequence,
                 test_subjects: Optional[Sequence[str]] = None) -> EvaluationResult:
        """Score a trained bank on the test subjects of ``items``."""
        try:
            _, test = split_by_subjects(items, test_subjects or self.config.eval.test_subject_set())
            result = evaluate_bank(bank, test)
        except PrimitiveSystemException:
            raise
        except Exception as e:
            self.logger.log_error(e, {"operation": "evaluate"})
            raise NumericException(f"Evaluation failed: {str(e)}")
        self._log(result.report, len(test))
        return result

    def evaluate_subjects(self, bank: ActionModelBank, items: Sequence,
                          subjects: Sequence[str]) -> EvaluationResult:
        """Score a bank on the items of the given subjects, training subjects included."""
        chosen = set(subjects)
        selected = [item for item in items if item.subject in chosen]
        result = evaluate_bank(bank, selected)
        self._log(result.report, len(selected))
        return result

    def cross_validate(self, items: Sequence, folds: Sequence[Sequence[str]], raw: bool = False,
                       seed: Optional[int] = None, jobs: Optional[int] = None) -> List[FoldResult]:
        """Retrain and evaluate for every fold."""
        jobs = self.config.system.jobs if jobs is None else jobs
        try:
            results = run_folds(items, folds, raw, self.config, seed, jobs)
        except PrimitiveSystemException:
            raise
        except Exception as e:
            self.logger.log_error(e, {"operation": "cross_validate"})
            raise NumericException(f"Fold evaluation failed: {str(e)}")
        for fold in results:
            self.logger.info(f"Fold {fold.fold} scored", {
                "test": ",".join(fold.test_subjects),
                "macro_f1": f"{fold.report.macro_f1:.4f}",
                "overall_f1": f"{fold.report.overall_f1:.4f}",
            })
        return results

    def write(self, out_dir, folds: Sequence[FoldResult], title: str = "Recognition report") -> EvaluationResult:
        pooled = write_reports(out_dir, folds, title)
        self._log(pooled.report, pooled.confusion.total)
        return pooled

    def _log(self, report: ScoreReport, n_trials: int) -> None:
        self.logger.log_pipeline_event("evaluation_complete", {
            "trials": n_trials,
            "macro_f1": f"{report.macro_f1:.4f}",
            "overall_f1": f"{report.overall_f1:.4f}",
        })
