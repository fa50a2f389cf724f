"""
Gaussian-mixture-emission hidden Markov models over raw frame features.
This is the raw-signal baseline: per-state mixtures of diagonal Gaussians,
trained by EM in the log domain.
"""

import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from ..core.config import HmmConfig
from ..core.entities import Topology, Trial
from ..core.exceptions import ArgumentException, NonFiniteValueException
from ..core.interfaces import ISequenceModel
from .discrete_hmm import TrainingResult, topology_mask, candidate_seed, selection_key, holdout_split

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
PRUNE_WEIGHT = 1e-8
_LOG_2PI = np.log(2.0 * np.pi)


def raw_features(trial: Trial, mode: str = "reduced", decimate: int = 1) -> np.ndarray:
    """
    Frame feature vectors of a trial.

    ``reduced`` gives 8 dimensions (v, w, pressure norm, bend norm); ``full``
    gives all 32 channels. Every ``decimate``-th frame is kept.
    """
    if decimate < 1:
        raise ArgumentException(f"Decimation must be >= 1, got {decimate}")
    if mode == "reduced":
        features = np.column_stack([
            trial.v, trial.w,
            np.linalg.norm(trial.F, axis=1),
            np.linalg.norm(trial.b, axis=1),
        ])
    elif mode == "full":
        features = np.column_stack([trial.v, trial.w, trial.F, trial.b])
    else:
        raise ArgumentException(f"Unknown raw feature mode: {mode!r}")
    return features[::decimate]


@dataclass(frozen=True, eq=False)
class GaussianHmm(ISequenceModel):
    """HMM whose states emit mixtures of diagonal Gaussians."""
    topology: Topology
    pi: np.ndarray
    A: np.ndarray
    weights: np.ndarray  # (N, M)
    means: np.ndarray  # (N, M, D)
    variances: np.ndarray  # (N, M, D)

    def __post_init__(self):
        arrays = {name: np.array(getattr(self, name), dtype=float)
                  for name in ("pi", "A", "weights", "means", "variances")}
        n = arrays["pi"].size
        if arrays["A"].shape != (n, n) or arrays["weights"].shape[0] != n:
            raise ArgumentException("Inconsistent Gaussian HMM shapes")
        if arrays["means"].shape != arrays["variances"].shape or arrays["means"].shape[:2] != arrays["weights"].shape:
            raise ArgumentException("Mixture means, variances and weights disagree in shape")
        if np.any(arrays["variances"] < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ArgumentException(f"Variances must be >= {VARIANCE_FLOOR}")
        for name in ("A", "weights"):
            rows = arrays[name]
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-6):
                raise ArgumentException(f"Gaussian HMM {name} rows must be probability distributions")
        for name, array in arrays.items():
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(self, "topology", Topology(self.topology))

    @property
    def n_states(self) -> int:
        return int(self.pi.size)

    @property
    def n_mixtures(self) -> int:
        return int(self.weights.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.means.shape[2])

    def log_likelihood(self, observations: np.ndarray) -> float:
        return gaussian_forward_loglik(self, observations)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "topology": self.topology.value,
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }


def _log(array: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(array)


def _component_logpdf(X: np.ndarray, weights, means, variances) -> np.ndarray:
    """log(w_nm) + log N(x | mu_nm, diag var_nm) for every frame; shape (..., N, M)."""
    diff = X[..., None, None, :] - means
    quad = np.sum(diff * diff / variances, axis=-1)
    norm = np.sum(np.log(variances), axis=-1) + means.shape[-1] * _LOG_2PI
    return _log(weights) - 0.5 * (norm + quad)


def _pad(sequences: Sequence[np.ndarray]):
    lengths = np.array([s.shape[0] for s in sequences], dtype=int)
    D = sequences[0].shape[1]
    X = np.zeros((len(sequences), int(lengths.max()), D))
    for k, seq in enumerate(sequences):
        X[k, :seq.shape[0]] = seq
    return X, lengths


def _log_forward_backward(log_pi, log_A, log_B, lengths, need_backward: bool = True):
    S, L, N = log_B.shape
    active = np.arange(L)[None, :] < lengths[:, None]
    la = np.empty((S, L, N))
    la[:, 0] = log_pi[None, :] + log_B[:, 0]
    for t in range(1, L):
        step = logsumexp(la[:, t - 1, :, None] + log_A[None], axis=1) + log_B[:, t]
        la[:, t] = np.where(active[:, t, None], step, la[:, t - 1])
    loglik = logsumexp(la[:, -1], axis=1)
    if not need_backward:
        return loglik, None, None
    lb = np.zeros((S, L, N))
    for t in range(L - 2, -1, -1):
        step = logsumexp(log_A[None] + (log_B[:, t + 1] + lb[:, t + 1])[:, None, :], axis=2)
        lb[:, t] = np.where(active[:, t + 1, None], step, 0.0)
    return loglik, la, lb


def gaussian_forward_loglik(model: GaussianHmm, features: np.ndarray) -> float:
    """Marginal log-probability of one frame sequence under the model."""
    features = np.asarray(features, dtype=float)
    if features.shape[0] == 0:
        return 0.0
    if features.ndim != 2 or features.shape[1] != model.n_features:
        raise ArgumentException(f"Expected (L, {model.n_features}) features, got {features.shape}")
    log_B = logsumexp(_component_logpdf(features[None], model.weights, model.means, model.variances), axis=-1)
    loglik, _, _ = _log_forward_backward(_log(model.pi), _log(model.A), log_B,
                                         np.array([features.shape[0]]), need_backward=False)
    return float(loglik[0])


def _initial_parameters(sequences: List[np.ndarray], n_states: int, n_mixtures: int,
                        topology: Topology, rng: np.random.Generator):
    """Uniform segmentation of every sequence into N parts seeds the state statistics."""
    D = sequences[0].shape[1]
    everything = np.concatenate(sequences)
    global_var = np.maximum(everything.var(axis=0), VARIANCE_FLOOR)

    means = np.empty((n_states, n_mixtures, D))
    variances = np.empty((n_states, n_mixtures, D))
    for i in range(n_states):
        frames = [np.array_split(seq, n_states)[i] for seq in sequences]
        frames = np.concatenate([f for f in frames if f.size] or [everything])
        mean = frames.mean(axis=0)
        var = np.maximum(frames.var(axis=0), VARIANCE_FLOOR) if frames.shape[0] > 1 else global_var
        for m in range(n_mixtures):
            jitter = rng.standard_normal(D) * np.sqrt(var) * (0.5 if n_mixtures > 1 else 0.0)
            means[i, m] = mean + jitter
            variances[i, m] = var

    mask = topology_mask(n_states, topology)
    A = (rng.random((n_states, n_states)) + 0.5) * mask
    A /= A.sum(axis=1, keepdims=True)
    if topology is Topology.BAKIS:
        pi = np.zeros(n_states)
        pi[0] = 1.0
    else:
        pi = rng.random(n_states) + 0.5
        pi /= pi.sum()
    weights = np.full((n_states, n_mixtures), 1.0 / n_mixtures)
    return pi, A, weights, means, variances


def _gaussian_em_step(params, X, lengths, topology: Topology, pruned: np.ndarray, warnings: List[str]):
    pi, A, weights, means, variances = params
    S, L, D = X.shape
    N, M = weights.shape
    active = np.arange(L)[None, :] < lengths[:, None]

    comp = _component_logpdf(X, weights, means, variances)  # (S, L, N, M)
    log_B = logsumexp(comp, axis=-1)
    log_A = _log(A)
    loglik, la, lb = _log_forward_backward(_log(pi), log_A, log_B, lengths)

    gamma = np.exp(la + lb - loglik[:, None, None]) * active[:, :, None]
    resp = gamma[..., None] * np.exp(comp - log_B[..., None])

    xi = np.zeros((N, N))
    for t in range(L - 1):
        on = active[:, t + 1]
        if not on.any():
            break
        log_xi = (la[on, t, :, None] + log_A[None] + (log_B[on, t + 1] + lb[on, t + 1])[:, None, :]
                  - loglik[on, None, None])
        xi += np.exp(log_xi).sum(axis=0)

    if topology is Topology.BAKIS:
        new_pi = pi.copy()
    else:
        new_pi = gamma[:, 0].sum(axis=0)
        new_pi /= new_pi.sum()

    new_A = A.copy()
    totals = xi.sum(axis=1)
    visited = totals > 0
    new_A[visited] = xi[visited] / totals[visited, None]
    new_A[~topology_mask(N, topology)] = 0.0

    occupancy = resp.sum(axis=(0, 1))  # (N, M)
    new_means = means.copy()
    new_variances = variances.copy()
    used = occupancy > 0
    weighted_x = np.einsum("slnm,sld->nmd", resp, X)
    new_means[used] = weighted_x[used] / occupancy[used][:, None]
    diff = X[:, :, None, None, :] - new_means
    weighted_sq = np.einsum("slnm,slnmd->nmd", resp, diff * diff)
    new_variances[used] = np.maximum(weighted_sq[used] / occupancy[used][:, None], VARIANCE_FLOOR)

    state_totals = occupancy.sum(axis=1, keepdims=True)
    new_weights = np.where(state_totals > 0, occupancy / np.where(state_totals > 0, state_totals, 1.0), weights)
    singular = (new_weights < PRUNE_WEIGHT) & np.all(new_variances <= VARIANCE_FLOOR, axis=-1) & ~pruned
    for i, m in zip(*np.nonzero(singular)):
        message = f"pruned singular mixture component {m} of state {i}"
        warnings.append(message)
        logger.warning("Gaussian HMM %s", message)
    pruned |= singular
    new_weights[pruned] = 0.0
    row_sums = new_weights.sum(axis=1, keepdims=True)
    new_weights = np.where(row_sums > 0, new_weights / np.where(row_sums > 0, row_sums, 1.0), weights)

    return float(loglik.sum()), (new_pi, new_A, new_weights, new_means, new_variances)


def gaussian_baum_welch(sequences: Sequence[np.ndarray], n_states: int, n_mixtures: int = 2,
                        topology: Topology = Topology.BAKIS, max_iter: int = 40, tol: float = 1e-4,
                        seed: Union[int, Sequence[int], None] = 0) -> TrainingResult:
    """
    Train a Gaussian-mixture HMM by EM.

    Args:
        sequences: Frame feature arrays of shape (L, D)
        n_states: Number of hidden states
        n_mixtures: Mixture components per state
        topology: Bakis or ergodic
        max_iter: Maximum EM iterations
        tol: Relative log-likelihood improvement that ends training
        seed: Seed for initialization

    Returns:
        TrainingResult holding the trained GaussianHmm
    """
    topology = Topology(topology)
    if n_states < 1 or n_mixtures < 1:
        raise ArgumentException("State and mixture counts must be >= 1")
    if not sequences:
        raise ArgumentException("Gaussian Baum-Welch needs at least one sequence")
    encoded = [np.asarray(s, dtype=float) for s in sequences]
    if any(s.ndim != 2 or s.shape[0] == 0 for s in encoded):
        raise ArgumentException("Feature sequences must be non-empty (L, D) arrays")
    if any(not np.all(np.isfinite(s)) for s in encoded):
        raise NonFiniteValueException("Feature sequences contain non-finite values")

    rng = np.random.default_rng(seed)
    X, lengths = _pad(encoded)
    params = _initial_parameters(encoded, n_states, n_mixtures, topology, rng)
    pruned = np.zeros((n_states, n_mixtures), dtype=bool)
    warnings: List[str] = []
    history: List[float] = []
    raw_history: List[float] = []
    previous = None
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        loglik, updated = _gaussian_em_step(params, X, lengths, topology, pruned, warnings)
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
        candidate = GaussianHmm(topology, *params)
        final = sum(gaussian_forward_loglik(candidate, s) for s in encoded)
        raw_history.append(final)
        if final < history[-1]:
            params = previous
        else:
            history.append(final)

    return TrainingResult(
        model=GaussianHmm(topology, *params),
        log_likelihood=history[-1],
        history=history,
        raw_history=raw_history,
        iterations=iterations,
        converged=converged,
        warnings=warnings,
        n_states=n_states,
        topology=topology,
    )


def _train_candidate(args) -> TrainingResult:
    train, valid, n_states, n_mixtures, topology, config, seed_material, restart = args
    result = gaussian_baum_welch(train, n_states, n_mixtures, topology, config.raw_max_iter, config.tol,
                                 seed_material)
    result.restart = restart
    if valid:
        result.score = float(sum(gaussian_forward_loglik(result.model, s) for s in valid))
    else:
        result.score = result.log_likelihood
    return result


def select_gaussian_model(sequences: Sequence[np.ndarray], action: str,
                          n_range: Optional[Sequence[int]] = None, topologies: Optional[Sequence[str]] = None,
                          restarts: Optional[int] = None, n_mixtures: Optional[int] = None,
                          config: Optional[HmmConfig] = None, seed: int = 0, jobs: int = 1) -> TrainingResult:
    """Gaussian counterpart of discrete model selection, with the same selection rule."""
    config = config or HmmConfig()
    n_range = list(n_range) if n_range is not None else config.raw_n_range()
    topologies = [Topology(t) for t in (topologies if topologies is not None else config.topology_list())]
    restarts = restarts if restarts is not None else config.raw_restarts
    n_mixtures = n_mixtures if n_mixtures is not None else config.mixtures
    if not n_range or not topologies or restarts < 1:
        raise ArgumentException("Model selection needs a state range, a topology and at least one restart")

    encoded = [np.asarray(s, dtype=float) for s in sequences]
    train, valid = encoded, []
    if config.selection == "heldout":
        split_rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(action.encode("utf-8"))])
        train_idx, valid_idx = holdout_split(len(encoded), config.holdout_fraction, split_rng)
        train = [encoded[i] for i in train_idx]
        valid = [encoded[i] for i in valid_idx]

    work = [
        (train, valid, n, n_mixtures, topology, config, candidate_seed(seed, action, topology, n, r), r)
        for topology in topologies for n in n_range for r in range(restarts)
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_candidate, work))
    else:
        results = [_train_candidate(item) for item in work]
    return max(results, key=selection_key)
