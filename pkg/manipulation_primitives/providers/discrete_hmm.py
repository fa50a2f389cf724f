"""
Discrete-emission hidden Markov models over primitive-feature tokens.
Covers vocabulary construction, scaled forward/backward recursions,
Baum-Welch training with Bakis or ergodic topologies, and model selection
over state counts, topologies and random restarts.
"""

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.config import HmmConfig
from ..core.entities import Topology, TokenSequence
from ..core.exceptions import ArgumentException, VocabularyException
from ..core.interfaces import ISequenceModel

logger = logging.getLogger(__name__)

UNKNOWN_TOKEN = "<unk>"
STOCHASTIC_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Vocabulary:
    """Token-to-id map; ids follow lexicographic token order and the unknown id comes last."""
    tokens: Tuple[str, ...] = ()

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if list(tokens) != sorted(set(tokens)):
            raise VocabularyException("Vocabulary tokens must be unique and sorted")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", {token: i for i, token in enumerate(tokens)})

    @property
    def size(self) -> int:
        """Number of ids including the unknown id."""
        return len(self.tokens) + 1

    @property
    def unknown_id(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, self.unknown_id)

    def encode(self, sequence: Union[TokenSequence, Sequence[str]]) -> np.ndarray:
        names = sequence.names if isinstance(sequence, TokenSequence) else list(sequence)
        return np.array([self.id_of(name) for name in names], dtype=int)


def build_vocabulary(training_sequences: Sequence[TokenSequence]) -> Vocabulary:
    """Assign ids to every distinct token seen in training."""
    if not training_sequences:
        raise ArgumentException("Cannot build a vocabulary from no sequences")
    seen = {name for sequence in training_sequences for name in sequence.names}
    return Vocabulary(tuple(sorted(seen)))


def topology_mask(n_states: int, topology: Topology) -> np.ndarray:
    """Allowed transitions: Bakis keeps self, next and skip-one; ergodic allows all."""
    topology = Topology(topology)
    if topology is Topology.ERGODIC:
        return np.ones((n_states, n_states), dtype=bool)
    i, j = np.indices((n_states, n_states))
    return (j >= i) & (j <= i + 2)


@dataclass(frozen=True, eq=False)
class DiscreteHmm(ISequenceModel):
    """A discrete-emission HMM with initial distribution ``pi``, transitions ``A`` and emissions ``B``."""
    topology: Topology
    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        n = pi.size
        if A.shape != (n, n) or B.ndim != 2 or B.shape[0] != n:
            raise ArgumentException(f"Inconsistent HMM shapes: pi {pi.shape}, A {A.shape}, B {B.shape}")
        for name, rows in (("pi", pi[None, :]), ("A", A), ("B", B)):
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-6):
                raise ArgumentException(f"HMM {name} rows must be probability distributions")
        for array in (pi, A, B):
            array.setflags(write=False)
        object.__setattr__(self, "topology", Topology(self.topology))
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_states(self) -> int:
        return int(self.pi.size)

    @property
    def n_symbols(self) -> int:
        return int(self.B.shape[1])

    def log_likelihood(self, observations: np.ndarray) -> float:
        return forward_loglik(self, observations)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "topology": self.topology.value,
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
        }


@dataclass
class TrainingResult:
    """Outcome of one Baum-Welch run or of a model selection."""
    model: Any
    log_likelihood: float
    history: List[float] = field(default_factory=list)
    raw_history: List[float] = field(default_factory=list)  # every evaluated log-likelihood, rejected steps included
    iterations: int = 0
    converged: bool = False
    warnings: List[str] = field(default_factory=list)
    n_states: int = 0
    topology: Optional[Topology] = None
    restart: int = 0
    score: float = 0.0  # selection criterion (training or held-out log-likelihood)


def _pad(sequences: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in sequences], dtype=int)
    padded = np.zeros((len(sequences), int(lengths.max())), dtype=int)
    for k, seq in enumerate(sequences):
        padded[k, :len(seq)] = seq
    return padded, lengths


def _forward_backward(pi: np.ndarray, A: np.ndarray, B: np.ndarray, obs: np.ndarray, lengths: np.ndarray,
                      need_backward: bool = True):
    """
    Scaled forward/backward recursions over a padded batch.

    Returns per-sequence log-likelihoods and, when requested, the scaled
    alpha, beta and scale arrays.
    """
    S, L = obs.shape
    N = pi.size
    alpha = np.zeros((S, L, N))
    scale = np.ones((S, L))
    active = np.arange(L)[None, :] < lengths[:, None]

    a = pi[None, :] * B[:, obs[:, 0]].T
    c = a.sum(axis=1)
    alpha[:, 0] = a / c[:, None]
    scale[:, 0] = c
    for t in range(1, L):
        a = (alpha[:, t - 1] @ A) * B[:, obs[:, t]].T
        c = a.sum(axis=1)
        on = active[:, t]
        safe = np.where(on, c, 1.0)
        alpha[:, t] = np.where(on[:, None], a / safe[:, None], alpha[:, t - 1])
        scale[:, t] = safe

    with np.errstate(divide="ignore"):
        loglik = np.log(scale).sum(axis=1)
    if not need_backward:
        return loglik, None, None, None

    beta = np.ones((S, L, N))
    for t in range(L - 2, -1, -1):
        b = (B[:, obs[:, t + 1]].T * beta[:, t + 1]) @ A.T / scale[:, t + 1][:, None]
        beta[:, t] = np.where(active[:, t + 1][:, None], b, 1.0)
    return loglik, alpha, beta, scale


def forward_loglik(model: DiscreteHmm, sequence: np.ndarray) -> float:
    """
    Exact marginal log P(sequence | model) by the scaled forward algorithm.

    Empty sequences have log-probability 0.
    """
    sequence = np.asarray(sequence, dtype=int)
    if sequence.size == 0:
        return 0.0
    if sequence.min() < 0 or sequence.max() >= model.n_symbols:
        raise VocabularyException(f"Observation ids must lie in [0, {model.n_symbols})")
    loglik, _, _, _ = _forward_backward(model.pi, model.A, model.B, sequence[None, :],
                                        np.array([sequence.size]), need_backward=False)
    return float(loglik[0])


def _random_parameters(n_states: int, n_symbols: int, topology: Topology, rng: np.random.Generator):
    mask = topology_mask(n_states, topology)
    A = rng.random((n_states, n_states)) * mask
    A /= A.sum(axis=1, keepdims=True)
    if topology is Topology.BAKIS:
        pi = np.zeros(n_states)
        pi[0] = 1.0
    else:
        pi = rng.random(n_states) + 0.5
        pi /= pi.sum()
    B = rng.random((n_states, n_symbols)) + 0.5
    B /= B.sum(axis=1, keepdims=True)
    return pi, A, B


def _em_step(pi, A, B, obs, lengths, topology: Topology, smoothing: float):
    """One E-step on the current parameters followed by the M-step."""
    loglik, alpha, beta, scale = _forward_backward(pi, A, B, obs, lengths)
    S, L, N = alpha.shape
    V = B.shape[1]
    active = np.arange(L)[None, :] < lengths[:, None]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    gamma *= active[:, :, None]

    xi = np.zeros((N, N))
    for t in range(L - 1):
        on = active[:, t + 1]
        if not on.any():
            break
        emit = B[:, obs[on, t + 1]].T * beta[on, t + 1]
        xi += np.einsum("si,ij,sj->ij", alpha[on, t] / scale[on, t + 1][:, None], A, emit)

    if topology is Topology.BAKIS:
        new_pi = pi.copy()
    else:
        new_pi = gamma[:, 0].sum(axis=0)
        new_pi /= new_pi.sum()

    mask = topology_mask(N, topology)
    new_A = A.copy()
    row_totals = xi.sum(axis=1)
    visited = row_totals > 0
    new_A[visited] = xi[visited] / row_totals[visited, None]
    new_A[~mask] = 0.0

    counts = np.zeros((N, V))
    for v in range(V):
        counts[:, v] = gamma[obs == v].sum(axis=0)
    totals = counts.sum(axis=1, keepdims=True) + V * smoothing
    new_B = np.where(totals > 0, (counts + smoothing) / np.where(totals > 0, totals, 1.0), B)

    return float(loglik.sum()), (new_pi, new_A, new_B)


def baum_welch(sequences: Sequence[np.ndarray], n_states: int, topology: Topology, n_symbols: int,
               smoothing: float = 0.01, max_iter: int = 100, tol: float = 1e-4,
               seed: Union[int, Sequence[int], None] = 0) -> TrainingResult:
    """
    Train a discrete HMM by expectation-maximization from a seeded random start.

    Emissions are smoothed with ``smoothing`` after every M-step. An
    iteration that would lower the total log-likelihood is rejected and
    training stops on the previous parameters, so the recorded history is
    non-decreasing.

    Args:
        sequences: Encoded observation sequences
        n_states: Number of hidden states
        topology: Bakis or ergodic
        n_symbols: Vocabulary size (unknown id included)
        smoothing: Additive emission smoothing
        max_iter: Maximum EM iterations
        tol: Relative log-likelihood improvement that ends training
        seed: Seed for the random initialization

    Returns:
        TrainingResult holding the trained DiscreteHmm

    Raises:
        ArgumentException: On empty sequences or invalid sizes
    """
    topology = Topology(topology)
    if n_states < 1:
        raise ArgumentException(f"State count must be >= 1, got {n_states}")
    if not sequences:
        raise ArgumentException("Baum-Welch needs at least one sequence")
    encoded = [np.asarray(s, dtype=int) for s in sequences]
    if any(s.size == 0 for s in encoded):
        raise ArgumentException("Baum-Welch sequences must be non-empty")

    warnings = []
    shortest = min(s.size for s in encoded)
    if topology is Topology.BAKIS and n_states > 2 * shortest - 1:
        warnings.append(f"bakis model with {n_states} states cannot reach its last states "
                        f"on a sequence of length {shortest}")
        logger.warning("Bakis N=%d exceeds the states reachable by the shortest sequence (%d tokens)",
                       n_states, shortest)

    rng = np.random.default_rng(seed)
    obs, lengths = _pad(encoded)
    params = _random_parameters(n_states, n_symbols, topology, rng)
    previous = None
    history: List[float] = []
    raw_history: List[float] = []
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        loglik, updated = _em_step(*params, obs, lengths, topology, smoothing)
        raw_history.append(loglik)
        if history and loglik < history[-1]:
            params = previous
            converged = True
            break
        history.append(loglik)
        if len(history) > 1 and history[-1] - history[-2] <= tol * abs(history[-2]):
            converged = True
            break
        previous, params = params, updated
    else:
        final, _, _, _ = _forward_backward(*params, obs, lengths, need_backward=False)
        final = float(final.sum())
        raw_history.append(final)
        if final < history[-1]:
            params = previous
        else:
            history.append(final)

    model = DiscreteHmm(topology, *params)
    return TrainingResult(
        model=model,
        log_likelihood=history[-1],
        history=history,
        raw_history=raw_history,
        iterations=iterations,
        converged=converged,
        warnings=warnings,
        n_states=n_states,
        topology=topology,
    )


def sample_sequence(model: DiscreteHmm, length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one observation sequence of the given length from the model."""
    out = np.zeros(length, dtype=int)
    if length == 0:
        return out
    state = rng.choice(model.n_states, p=model.pi)
    for t in range(length):
        out[t] = rng.choice(model.n_symbols, p=model.B[state])
        state = rng.choice(model.n_states, p=model.A[state])
    return out


def candidate_seed(seed: int, action: str, topology: Topology, n_states: int, restart: int) -> List[int]:
    """Deterministic per-candidate seed material."""
    topology_id = 0 if Topology(topology) is Topology.BAKIS else 1
    return [int(seed) & 0xFFFFFFFF, zlib.crc32(action.encode("utf-8")), topology_id, n_states, restart]


def selection_key(result: TrainingResult) -> Tuple[float, int, int]:
    """Higher is better: score, then fewer states, then Bakis over ergodic."""
    return (result.score, -result.n_states, 1 if result.topology is Topology.BAKIS else 0)


def holdout_split(count: int, fraction: float, rng: np.random.Generator) -> Tuple[List[int], List[int]]:
    """Deterministic train/validation index split; empty validation when too few sequences."""
    n_valid = int(math.ceil(fraction * count))
    if count < 2 or n_valid >= count:
        return list(range(count)), []
    order = rng.permutation(count)
    return sorted(order[n_valid:].tolist()), sorted(order[:n_valid].tolist())


def _train_candidate(args) -> TrainingResult:
    train, valid, n_states, topology, n_symbols, config, seed_material, restart = args
    result = baum_welch(train, n_states, topology, n_symbols, config.smoothing, config.max_iter,
                        config.tol, seed_material)
    result.restart = restart
    if valid:
        result.score = float(sum(forward_loglik(result.model, s) for s in valid))
    else:
        result.score = result.log_likelihood
    return result


def select_model(sequences: Sequence[np.ndarray], action: str, n_symbols: int,
                 n_range: Optional[Sequence[int]] = None, topologies: Optional[Sequence[str]] = None,
                 restarts: Optional[int] = None, config: Optional[HmmConfig] = None,
                 seed: int = 0, jobs: int = 1) -> TrainingResult:
    """
    Train every (topology, N, restart) candidate and keep the best.

    Selection uses the total training log-likelihood, or the log-likelihood
    of a held-out share of the sequences when ``config.selection`` is
    ``heldout``. Ties go to fewer states, then to Bakis.

    Returns:
        TrainingResult of the selected candidate
    """
    config = config or HmmConfig()
    n_range = list(n_range) if n_range is not None else config.n_range()
    topologies = [Topology(t) for t in (topologies if topologies is not None else config.topology_list())]
    restarts = restarts if restarts is not None else config.restarts
    if not n_range or not topologies or restarts < 1:
        raise ArgumentException("Model selection needs a state range, a topology and at least one restart")

    encoded = [np.asarray(s, dtype=int) for s in sequences]
    train, valid = encoded, []
    if config.selection == "heldout":
        split_rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(action.encode("utf-8"))])
        train_idx, valid_idx = holdout_split(len(encoded), config.holdout_fraction, split_rng)
        train = [encoded[i] for i in train_idx]
        valid = [encoded[i] for i in valid_idx]

    work = [
        (train, valid, n, topology, n_symbols, config, candidate_seed(seed, action, topology, n, r), r)
        for topology in topologies for n in n_range for r in range(restarts)
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_candidate, work))
    else:
        results = [_train_candidate(item) for item in work]

    # max() keeps the first of equal keys, so ties resolve in enumeration order
    best = max(results, key=selection_key)
    logger.debug("Selected %s N=%d for %s (score %.6g over %d candidates)",
                 best.topology.value, best.n_states, action, best.score, len(results))
    return best
