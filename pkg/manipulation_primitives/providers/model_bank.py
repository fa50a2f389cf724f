"""
Per-action model bank.
Holds one trained sequence model per action, classifies by maximum
likelihood and persists itself as a versioned, self-describing text file.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import ACTION_LABELS, BANK_FORMAT_HEADER, BANK_FORMAT_VERSION, BANK_FLOAT_FORMAT
from ..core.config import ConfigurationManager
from ..core.entities import Topology, TokenSequence, Trial
from ..core.exceptions import (
    IncompleteBankException, MissingActionException, SchemaException, DataRepositoryException,
    ArgumentException, DataException, BankKindException,
)
from ..core.logging_service import LoggingService
from .discrete_hmm import (
    DiscreteHmm, Vocabulary, UNKNOWN_TOKEN, build_vocabulary, select_model, forward_loglik,
)
from .gaussian_hmm import GaussianHmm, raw_features, select_gaussian_model, gaussian_forward_loglik

BANK_KINDS = ("discrete", "gaussian")


@dataclass
class ModelInfo:
    """Training metadata kept next to each model."""
    topology: Topology
    n_states: int
    log_likelihood: float
    n_sequences: int = 0


@dataclass
class ActionModelBank:
    """
    Map from action label to trained model.

    ``kind`` is ``discrete`` (token sequences, with a vocabulary) or
    ``gaussian`` (raw frame features, with the feature mode and decimation).
    """
    kind: str = "discrete"
    vocabulary: Optional[Vocabulary] = None
    feature_mode: str = "reduced"
    decimate: int = 1
    models: Dict[str, Union[DiscreteHmm, GaussianHmm]] = field(default_factory=dict)
    info: Dict[str, ModelInfo] = field(default_factory=dict)
    required_actions: Tuple[str, ...] = ACTION_LABELS

    def add(self, action: str, model, info: ModelInfo) -> None:
        self.models[action] = model
        self.info[action] = info

    @property
    def actions(self) -> List[str]:
        return sorted(self.models)

    def missing_actions(self) -> List[str]:
        return sorted(set(self.required_actions) - set(self.models))

    def is_complete(self) -> bool:
        return not self.missing_actions()

    def _observations(self, item) -> np.ndarray:
        if self.kind == "discrete":
            if isinstance(item, Trial):
                raise BankKindException(
                    f"Token bank cannot classify raw trial {item.id}; extract its token sequence first",
                    {"bank": self.kind, "item": item.id})
            if isinstance(item, np.ndarray):
                if item.dtype.kind not in "iu":
                    raise BankKindException("Token bank expects integer token ids", {"dtype": str(item.dtype)})
                return item.astype(int)
            return self.vocabulary.encode(item)

        if isinstance(item, Trial):
            return raw_features(item, self.feature_mode, self.decimate)
        if isinstance(item, TokenSequence) or (isinstance(item, (list, tuple)) and item
                                                and isinstance(item[0], str)):
            trial_id = getattr(item, "trial_id", "")
            raise BankKindException(
                f"Raw-feature bank cannot classify token sequence {trial_id}".rstrip()
                + "; use the raw trial instead", {"bank": self.kind, "item": trial_id})
        features = np.asarray(item, dtype=float)
        expected = next(iter(self.models.values())).n_features if self.models else None
        if features.ndim != 2 or (expected is not None and features.shape[1] != expected):
            raise BankKindException(
                f"Raw-feature bank expects frames with {expected} features, got shape {features.shape}",
                {"bank": self.kind, "shape": features.shape})
        return features

    def log_likelihoods(self, item) -> Dict[str, float]:
        """Log-likelihood of one sequence (or trial) under every model."""
        observations = self._observations(item)
        if self.kind == "discrete":
            return {action: forward_loglik(model, observations) for action, model in self.models.items()}
        return {action: gaussian_forward_loglik(model, observations) for action, model in self.models.items()}

    def classify(self, item) -> Tuple[str, Dict[str, float]]:
        """
        Maximum-likelihood action for one sequence.

        Args:
            item: TokenSequence / token names / encoded ids for discrete banks;
                Trial or feature array for Gaussian banks

        Returns:
            (label, per-action log-likelihoods); equal scores resolve to the
            lexicographically first label

        Raises:
            IncompleteBankException: If a required action has no model
        """
        missing = self.missing_actions()
        if missing:
            raise IncompleteBankException(f"Model bank lacks actions: {', '.join(missing)}", {"missing": missing})
        scores = self.log_likelihoods(item)
        best_label, best_score = None, -np.inf
        for label in sorted(scores):
            if best_label is None or scores[label] > best_score:
                best_label, best_score = label, scores[label]
        return best_label, scores


def classify(bank: ActionModelBank, sequence) -> Tuple[str, Dict[str, float]]:
    return bank.classify(sequence)


def _fmt(value: float) -> str:
    return format(float(value), BANK_FLOAT_FORMAT)


def _row(values) -> str:
    return " ".join(_fmt(v) for v in np.ravel(values))


def save_bank(bank: ActionModelBank, path) -> None:
    """Write the bank as a versioned text file with 17-significant-digit numbers."""
    lines = [f"{BANK_FORMAT_HEADER} {BANK_FORMAT_VERSION}", f"kind {bank.kind}"]
    if bank.kind == "discrete":
        tokens = list(bank.vocabulary.tokens) + [UNKNOWN_TOKEN]
        lines.append(f"vocabulary {len(tokens)} {' '.join(tokens)}")
    else:
        lines.append(f"features {bank.feature_mode} {bank.decimate}")
    lines.append(f"actions {len(bank.models)}")

    for action in bank.actions:
        model, info = bank.models[action], bank.info[action]
        lines += [
            f"action {action}",
            f"topology {model.topology.value}",
            f"states {model.n_states}",
            f"sequences {info.n_sequences}",
            f"loglik {_fmt(info.log_likelihood)}",
            f"pi {_row(model.pi)}",
            "A",
        ]
        lines += [_row(row) for row in model.A]
        if bank.kind == "discrete":
            lines.append("B")
            lines += [_row(row) for row in model.B]
        else:
            lines.append(f"mixtures {model.n_mixtures} {model.n_features}")
            lines.append("weights")
            lines += [_row(row) for row in model.weights]
            lines.append("means")
            lines += [_row(model.means[i, m]) for i in range(model.n_states) for m in range(model.n_mixtures)]
            lines.append("variances")
            lines += [_row(model.variances[i, m]) for i in range(model.n_states) for m in range(model.n_mixtures)]
        lines.append("end")

    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise DataRepositoryException(f"Failed to write model bank {path}: {str(e)}", {"path": str(path)})


class _BankReader:
    """Line cursor over a bank file."""

    def __init__(self, lines: List[str], path: Path):
        self.lines = [line.strip() for line in lines if line.strip()]
        self.pos = 0
        self.path = path

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise SchemaException(f"{self.path}: unexpected end of model bank")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def keyed(self, key: str) -> List[str]:
        parts = self.next().split()
        if not parts or parts[0] != key:
            raise SchemaException(f"{self.path}: expected '{key}' at line {self.pos}")
        return parts[1:]

    def matrix(self, rows: int) -> np.ndarray:
        return np.array([[float(v) for v in self.next().split()] for _ in range(rows)])


def load_bank(path) -> ActionModelBank:
    """
    Read a bank written by :func:`save_bank`.

    Raises:
        DataRepositoryException: If the file cannot be read
        SchemaException: If the content does not follow the bank format
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            reader = _BankReader(f.readlines(), path)
    except OSError as e:
        raise DataRepositoryException(f"Failed to read model bank {path}: {str(e)}", {"path": str(path)})

    try:
        header = reader.next().split()
        if header[:1] != [BANK_FORMAT_HEADER] or len(header) != 2 or int(header[1]) != BANK_FORMAT_VERSION:
            raise SchemaException(f"{path}: not a version {BANK_FORMAT_VERSION} model bank")
        kind = reader.keyed("kind")[0]
        if kind not in BANK_KINDS:
            raise SchemaException(f"{path}: unknown bank kind {kind!r}")
        bank = ActionModelBank(kind=kind)
        if kind == "discrete":
            parts = reader.keyed("vocabulary")
            tokens = parts[1:]
            if int(parts[0]) != len(tokens) or not tokens or tokens[-1] != UNKNOWN_TOKEN:
                raise SchemaException(f"{path}: malformed vocabulary")
            bank.vocabulary = Vocabulary(tuple(tokens[:-1]))
        else:
            mode, decimate = reader.keyed("features")
            bank.feature_mode, bank.decimate = mode, int(decimate)

        for _ in range(int(reader.keyed("actions")[0])):
            action = reader.keyed("action")[0]
            topology = Topology(reader.keyed("topology")[0])
            n = int(reader.keyed("states")[0])
            n_sequences = int(reader.keyed("sequences")[0])
            loglik = float(reader.keyed("loglik")[0])
            pi = np.array([float(v) for v in reader.keyed("pi")])
            reader.keyed("A")
            A = reader.matrix(n)
            if kind == "discrete":
                reader.keyed("B")
                model = DiscreteHmm(topology, pi, A, reader.matrix(n))
            else:
                m, d = (int(v) for v in reader.keyed("mixtures"))
                reader.keyed("weights")
                weights = reader.matrix(n)
                reader.keyed("means")
                means = reader.matrix(n * m).reshape(n, m, d)
                reader.keyed("variances")
                variances = reader.matrix(n * m).reshape(n, m, d)
                model = GaussianHmm(topology, pi, A, weights, means, variances)
            reader.keyed("end")
            bank.add(action, model, ModelInfo(topology, n, loglik, n_sequences))
    except (ValueError, IndexError, ArgumentException) as e:
        raise SchemaException(f"{path}: malformed model bank: {str(e)}", {"path": str(path)})
    return bank


def _require_actions(labels: Sequence[str], required: Sequence[str]) -> None:
    missing = sorted(set(required) - set(labels))
    if missing:
        raise MissingActionException(
            f"Training split has no trials for action {missing[0]}"
            + (f" (also missing: {', '.join(missing[1:])})" if len(missing) > 1 else ""),
            {"missing": missing})


def _discrete_job(args):
    action, encoded, n_symbols, config, seed = args
    return action, select_model(encoded, action, n_symbols, config=config, seed=seed)


def _gaussian_job(args):
    action, features, config, seed = args
    return action, select_gaussian_model(features, action, config=config, seed=seed)


class ModelTrainer:
    """
    Builds model banks from training data.
    Selection for different actions runs in parallel processes when more
    than one job is configured.
    """

    def __init__(self, config: Optional[ConfigurationManager] = None,
                 required_actions: Sequence[str] = ACTION_LABELS):
        self.config = config or ConfigurationManager.get_instance()
        self.required_actions = tuple(required_actions)
        self.logger = LoggingService("training")

    def _run(self, job, work, jobs: int):
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(job, work))
        return [job(item) for item in work]

    def build_bank(self, sequences: Sequence[TokenSequence], seed: Optional[int] = None,
                   jobs: Optional[int] = None) -> ActionModelBank:
        """
        Train one discrete HMM per action from labeled token sequences.

        Raises:
            MissingActionException: If a required action has no usable sequence
        """
        seed = self.config.system.seed if seed is None else seed
        jobs = self.config.system.jobs if jobs is None else jobs

        usable = []
        for sequence in sequences:
            if len(sequence) == 0:
                self.logger.warning("Skipping empty token sequence in training", {"trial": sequence.trial_id})
            elif not sequence.action:
                raise DataException(f"Training sequence {sequence.trial_id} has no action label")
            else:
                usable.append(sequence)
        _require_actions({s.action for s in usable}, self.required_actions)

        vocabulary = build_vocabulary(usable)
        by_action: Dict[str, List[np.ndarray]] = {}
        for sequence in usable:
            by_action.setdefault(sequence.action, []).append(vocabulary.encode(sequence))

        work = [(action, by_action[action], vocabulary.size, self.config.hmm, seed)
                for action in sorted(by_action)]
        bank = ActionModelBank(kind="discrete", vocabulary=vocabulary, required_actions=self.required_actions)
        for action, result in self._run(_discrete_job, work, jobs):
            for warning in result.warnings:
                self.logger.warning(f"{action}: {warning}")
            bank.add(action, result.model,
                     ModelInfo(result.topology, result.n_states, result.log_likelihood, len(by_action[action])))
            self.logger.info(f"Selected {result.topology.value} N={result.n_states} for {action}",
                             {"loglik": f"{result.log_likelihood:.6g}", "sequences": len(by_action[action])})

        self.logger.log_pipeline_event("bank_trained", {"kind": "discrete", "actions": len(bank.models),
                                                        "vocabulary": vocabulary.size})
        return bank

    def build_raw_bank(self, trials: Sequence[Trial], seed: Optional[int] = None,
                       jobs: Optional[int] = None) -> ActionModelBank:
        """Train one Gaussian-mixture HMM per action from labeled raw trials."""
        seed = self.config.system.seed if seed is None else seed
        jobs = self.config.system.jobs if jobs is None else jobs
        hmm = self.config.hmm

        for trial in trials:
            if not trial.action_label:
                raise DataException(f"Training trial {trial.id} has no action label")
        _require_actions({t.action_label for t in trials}, self.required_actions)

        by_action: Dict[str, List[np.ndarray]] = {}
        for trial in trials:
            by_action.setdefault(trial.action_label, []).append(
                raw_features(trial, hmm.raw_features, hmm.raw_decimate))

        work = [(action, by_action[action], hmm, seed) for action in sorted(by_action)]
        bank = ActionModelBank(kind="gaussian", feature_mode=hmm.raw_features, decimate=hmm.raw_decimate,
                               required_actions=self.required_actions)
        for action, result in self._run(_gaussian_job, work, jobs):
            for warning in result.warnings:
                self.logger.warning(f"{action}: {warning}")
            bank.add(action, result.model,
                     ModelInfo(result.topology, result.n_states, result.log_likelihood, len(by_action[action])))
            self.logger.info(f"Selected raw {result.topology.value} N={result.n_states} for {action}",
                             {"loglik": f"{result.log_likelihood:.6g}"})

        self.logger.log_pipeline_event("bank_trained", {"kind": "gaussian", "actions": len(bank.models)})
        return bank
