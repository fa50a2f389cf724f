"""
Primitive-feature extraction.
Turns a resampled trial into a token sequence: level crossings of the
composite force and bend signals give grasp/release and bend/extend tokens,
bell fits on the velocity channels give reach and rotate tokens.
"""

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks, peak_widths

from ..config import VELOCITY_CHANNELS, ANGULAR_CHANNELS
from ..core.config import ConfigurationManager, ExtractionConfig
from ..core.entities import (
    Trial, Series, Token, TokenSequence, LevelSet, BellParams, BellInstance,
    ChannelGroup, PrimitiveFamily,
)
from ..core.exceptions import (
    ArgumentException, DegenerateLevelsException, VocabularyException, PrimitiveSystemException,
    NumericException,
)
from ..core.logging_service import LoggingService
from .profile_provider import ANALYTIC_PROFILE, ProfileModel, ProfileSet, bell_values, fwhm_fraction
from .signal_processor import composite_norm, smooth, resample

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5) - 1) / 2
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2

_CROSSING_PREFIXES = {
    PrimitiveFamily.GRASP: ("G", "R"),
    PrimitiveFamily.BEND: ("B", "E"),
}


def parse_token(name: str) -> Token:
    """Parse a token in the canonical grammar."""
    return Token.parse(name)


def validate_token_name(name: str) -> bool:
    """Check whether ``name`` is a valid canonical token."""
    try:
        Token.parse(name)
    except VocabularyException:
        return False
    return True


def compute_levels(training_trials: Sequence[Trial], group: ChannelGroup) -> LevelSet:
    """
    Quantization levels from the average per-trial maximum of a composite signal.

    Args:
        training_trials: Training trials
        group: Pressure or bend channel group

    Returns:
        LevelSet at 15/45/75% of the average maximum

    Raises:
        ArgumentException: If the training set is empty
        DegenerateLevelsException: If every composite signal is zero
    """
    if not training_trials:
        raise ArgumentException("Cannot compute levels from an empty training set")
    maxima = [float(np.max(composite_norm(trial, group).values)) for trial in training_trials]
    average = float(np.mean(maxima))
    if not average > 0:
        raise DegenerateLevelsException(
            f"Composite {ChannelGroup(group).value} signal is zero across the training set",
            {"trials": len(training_trials)})
    return LevelSet.from_average(average)


def detect_crossings(series: Series, levels: LevelSet, family: PrimitiveFamily, debounce: int) -> List[Token]:
    """
    Detect debounced level crossings of a smoothed composite signal.

    A crossing counts once the signal has stayed on the far side of the
    level for ``debounce`` samples (the crossing sample included). Rising
    crossings give grasp/bend tokens and falling crossings release/extend
    tokens, stamped at the linearly interpolated crossing time.
    """
    if family not in _CROSSING_PREFIXES:
        raise ArgumentException(f"Crossing detection needs the grasp/release or bend/extend family, got {family}")
    if debounce < 1:
        raise ArgumentException(f"Debounce must be >= 1, got {debounce}")
    rising_prefix, falling_prefix = _CROSSING_PREFIXES[family]
    x = series.values
    n = x.size
    found: List[Tuple[float, int, str]] = []

    for rank, (suffix, level) in enumerate(levels.items()):
        above = x >= level
        state = bool(above[0]) if n else False
        for i in range(1, n):
            if above[i] == above[i - 1] or above[i] == state:
                continue
            if i + debounce > n or np.any(above[i:i + debounce] != above[i]):
                continue
            state = bool(above[i])
            frac = (level - x[i - 1]) / (x[i] - x[i - 1])
            t_cross = series.time_at(i - 1 + frac)
            if state:
                found.append((t_cross, rank, rising_prefix + suffix))
            else:
                # falling crossings order high before low
                found.append((t_cross, -rank, falling_prefix + suffix))

    found.sort(key=lambda item: (item[0], item[1]))
    return [Token((symbol,), t_cross) for t_cross, _, symbol in found]


def detect_peaks(series: Series, min_prominence: float, min_height: float = 0.0) -> List[Tuple[int, float]]:
    """
    Local extrema of |series| with prominence >= min_prominence * max|series|.

    ``min_height`` adds an absolute floor: the prominence must also reach it,
    and a series whose peak magnitude stays below it has no peaks.

    Returns:
        (index, signed value) pairs sorted by time
    """
    x = series.values
    magnitude = np.abs(x)
    if magnitude.size == 0 or magnitude.max() <= 0 or magnitude.max() < min_height:
        return []
    indices, _ = find_peaks(magnitude, prominence=max(min_prominence * magnitude.max(), min_height))
    return [(int(i), float(x[i])) for i in indices]


def peak_floor(family: PrimitiveFamily, model: ProfileModel = ANALYTIC_PROFILE,
               config: Optional[ExtractionConfig] = None) -> float:
    """
    Smallest peak speed a bell of at most ``max_bell_duration`` seconds needs
    to reach the pruning magnitude of its family.
    """
    config = config or ExtractionConfig()
    threshold = config.min_reach_magnitude if family is PrimitiveFamily.REACH else config.min_rotate_magnitude
    return threshold * model.peak_value / config.max_bell_duration


def golden_section_minimize(f: Callable[[float], float], lower: float, upper: float,
                            tol: float = 1e-4) -> Tuple[float, float]:
    """
    Golden-section search for the minimum of a unimodal function on [lower, upper].

    Returns:
        (argmin, minimum) after the bracket shrinks below ``tol``
    """
    a, b = min(lower, upper), max(lower, upper)
    h = b - a
    if h <= tol:
        mid = (a + b) / 2
        return mid, f(mid)

    steps = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))
    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = f(c)
    yd = f(d)
    for _ in range(steps - 1):
        if yc < yd:
            b, d, yd = d, c, yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = f(c)
        else:
            a, c, yc = c, d, yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = f(d)
    return (c, yc) if yc < yd else (d, yd)


@dataclass
class BellFit:
    """Result of fitting bells to one channel."""
    instances: List[BellInstance] = field(default_factory=list)
    mse: float = 0.0
    converged: bool = True
    sweeps: int = 0

    def __iter__(self):
        return iter(self.instances)

    def __len__(self) -> int:
        return len(self.instances)


def fit_bells(series: Series, peaks: List[Tuple[int, float]], model: ProfileModel = ANALYTIC_PROFILE,
              channel: str = "vx", config: Optional[ExtractionConfig] = None) -> BellFit:
    """
    Fit one peak-anchored bell per detected peak.

    Each bell keeps its peak location and value; durations are optimized
    coordinate-wise by golden-section search over [4 samples, series span]
    to minimize the mean squared error between the series and the sum of
    all bells.

    Args:
        series: Velocity or angular-velocity channel
        peaks: Output of :func:`detect_peaks` on the same series
        model: Bell profile
        channel: Channel name the series came from
        config: Extraction parameters (tolerances, sweep limit)

    Returns:
        BellFit with one instance per peak, final MSE and convergence flag
    """
    config = config or ExtractionConfig()
    x = series.values
    n = x.size
    if n == 0:
        return BellFit()
    if not peaks:
        return BellFit([], float(np.sum(x * x) / n), True, 0)

    times = series.times
    rate = series.rate
    t_lo = 4.0 / rate
    t_hi = max((n - 1) / rate, t_lo)
    tau_peak = model.peak_tau

    index = np.array([p[0] for p in peaks], dtype=int)
    amplitude = np.array([p[1] for p in peaks], dtype=float)
    t_peak = times[index]
    widths = peak_widths(np.abs(x), index, rel_height=0.5)[0] / rate
    durations = np.clip(widths / fwhm_fraction(model), t_lo, t_hi)

    bells = [bell_values(times, a, tp, T, model) for a, tp, T in zip(amplitude, t_peak, durations)]
    recon = np.sum(bells, axis=0)
    mse = float(np.mean((x - recon) ** 2))
    converged = False
    sweeps = 0

    for sweeps in range(1, config.max_sweeps + 1):
        for i in range(len(bells)):
            target = x - (recon - bells[i])
            a, tp = amplitude[i], t_peak[i]

            def cost(T: float) -> float:
                # change of the squared error relative to leaving bell i out
                i0 = np.searchsorted(times, tp - tau_peak * T, side="left")
                i1 = np.searchsorted(times, tp + (1.0 - tau_peak) * T, side="right")
                b = bell_values(times[i0:i1], a, tp, T, model)
                return float(np.sum(b * b - 2.0 * target[i0:i1] * b))

            best_T, best_cost = golden_section_minimize(cost, t_lo, t_hi, config.fit_tolerance)
            if best_cost < cost(durations[i]):
                durations[i] = best_T
                updated = bell_values(times, a, tp, best_T, model)
                recon += updated - bells[i]
                bells[i] = updated

        recon = np.sum(bells, axis=0)
        new_mse = float(np.mean((x - recon) ** 2))
        improvement = mse - new_mse
        mse = new_mse
        if improvement < config.improvement_tolerance:
            converged = True
            break

    if not np.isfinite(mse):
        raise NumericException(f"Bell fit on {channel} produced a non-finite error")
    if not converged:
        logger.warning("Bell fit on %s did not converge after %d sweeps (mse=%.3g)", channel, sweeps, mse)

    residual = (x - recon) ** 2
    axis, peak_value = channel[1], model.peak_value
    instances = []
    for i in range(len(bells)):
        T = float(durations[i])
        i0 = np.searchsorted(times, t_peak[i] - tau_peak * T, side="left")
        i1 = np.searchsorted(times, t_peak[i] + (1.0 - tau_peak) * T, side="right")
        params = BellParams(
            axis=axis,
            sign=1 if amplitude[i] > 0 else -1,
            magnitude=float(abs(amplitude[i]) * T / peak_value),
            t_s=float(t_peak[i] - tau_peak * T),
            T=T,
        )
        instances.append(BellInstance(params, channel, float(np.sum(residual[i0:i1]) / n)))
    return BellFit(instances, mse, converged, sweeps)


def prune_bells(instances: Sequence[BellInstance], config: Optional[ExtractionConfig] = None) -> List[BellInstance]:
    """Drop reach/rotate instances below the configured magnitude (boundary kept)."""
    config = config or ExtractionConfig()
    kept = []
    for instance in instances:
        threshold = (config.min_reach_magnitude if instance.family is PrimitiveFamily.REACH
                     else config.min_rotate_magnitude)
        if instance.params.magnitude >= threshold:
            kept.append(instance)
    return kept


def merge_concurrent(instances: Sequence[BellInstance], family: PrimitiveFamily) -> List[Token]:
    """
    Combine concurrent bells of one family into compound tokens.

    A later bell on a new axis joins the open token when it starts within the
    first half of the token's earliest bell; a bell on an axis the token
    already holds starts a new token.
    """
    if family not in (PrimitiveFamily.REACH, PrimitiveFamily.ROTATE):
        raise ArgumentException(f"Only reach and rotate bells can be merged, got {family}")
    for instance in instances:
        if instance.family is not family:
            raise ArgumentException(f"Instance on {instance.channel} is not in the {family.value} family")

    ordered = sorted(instances, key=lambda inst: (inst.params.t_s, inst.symbol))
    tokens: List[Token] = []
    group: List[BellInstance] = []

    def close():
        if group:
            tokens.append(Token.of([inst.symbol for inst in group], group[0].params.t_s))

    for instance in ordered:
        if group:
            anchor = group[0].params
            axes = {inst.params.axis for inst in group}
            if (instance.params.t_s < anchor.t_s + anchor.T / 2
                    and instance.params.axis not in axes and len(group) < 3):
                group.append(instance)
                continue
            close()
        group = [instance]
    close()
    return tokens


def _smoothed_composite(trial: Trial, group: ChannelGroup, window: int) -> Series:
    series = composite_norm(trial, group)
    n = len(series)
    window = min(window, n if n % 2 == 1 else n - 1)
    return smooth(series, max(window, 1))


def extract_sequence(trial: Trial, levels_force: LevelSet, levels_bend: LevelSet,
                     model=ANALYTIC_PROFILE, config: Optional[ExtractionConfig] = None,
                     smoothing_window: int = 5) -> TokenSequence:
    """
    Run the full extraction pipeline on a resampled trial.

    Args:
        trial: Uniformly sampled trial
        levels_force: Levels of the composite pressure signal
        levels_bend: Levels of the composite bend signal
        model: ProfileModel shared by reach and rotate, or a ProfileSet
        config: Extraction parameters
        smoothing_window: Moving-average window for the composite signals

    Returns:
        TokenSequence ordered by start time, ties by token name
    """
    config = config or ExtractionConfig()
    profiles = model if isinstance(model, ProfileSet) else ProfileSet(model, model)
    if not trial.is_uniform(1e-6):
        raise ArgumentException(f"Trial {trial.id} must be resampled before extraction")

    tokens: List[Token] = []
    tokens += detect_crossings(_smoothed_composite(trial, ChannelGroup.PRESSURE, smoothing_window),
                               levels_force, PrimitiveFamily.GRASP, config.debounce)
    tokens += detect_crossings(_smoothed_composite(trial, ChannelGroup.BEND, smoothing_window),
                               levels_bend, PrimitiveFamily.BEND, config.debounce)

    for family, channels in ((PrimitiveFamily.REACH, VELOCITY_CHANNELS),
                             (PrimitiveFamily.ROTATE, ANGULAR_CHANNELS)):
        kept: List[BellInstance] = []
        for channel in channels:
            series = Series(t0=float(trial.t[0]), rate=trial.rate, values=trial.channel(channel))
            profile = profiles.for_channel(channel)
            peaks = detect_peaks(series, config.peak_min_prominence, peak_floor(family, profile, config))
            if not peaks:
                continue
            fit = fit_bells(series, peaks, profile, channel, config)
            kept += prune_bells(fit.instances, config)
        tokens += merge_concurrent(kept, family)

    tokens.sort(key=lambda token: (token.t_s, token.name))
    return TokenSequence(tuple(tokens), trial.id, trial.subject, trial.action_label)


def token_histogram(sequences: Sequence[TokenSequence]) -> Dict[str, int]:
    """Token counts over a set of sequences, sorted by token name."""
    counts = Counter(name for sequence in sequences for name in sequence.names)
    return dict(sorted(counts.items()))


def _extract_worker(args) -> TokenSequence:
    trial, levels_force, levels_bend, profiles, config, window, rate = args
    return extract_sequence(resample(trial, rate), levels_force, levels_bend, profiles, config, window)


class PrimitiveExtractor:
    """
    Extraction pipeline bound to a configuration, level sets and profiles.
    Resamples each trial to the configured rate before extracting.
    """

    def __init__(self, config: Optional[ConfigurationManager] = None,
                 profiles: Optional[ProfileSet] = None,
                 levels_force: Optional[LevelSet] = None,
                 levels_bend: Optional[LevelSet] = None):
        """
        Initialize primitive extractor.

        Args:
            config: Configuration manager (the singleton when omitted)
            profiles: Reach/rotate profiles, analytic by default
            levels_force: Pressure levels, normally set through :meth:`fit_levels`
            levels_bend: Bend levels
        """
        self.config = config or ConfigurationManager.get_instance()
        self.profiles = profiles or ProfileSet()
        self.levels_force = levels_force
        self.levels_bend = levels_bend
        self.logger = LoggingService("extraction")

    def fit_levels(self, training_trials: Sequence[Trial]) -> Tuple[LevelSet, LevelSet]:
        """Compute and store force and bend levels from the training trials."""
        rate = self.config.signal.rate
        resampled = [resample(trial, rate) for trial in training_trials]
        self.levels_force = compute_levels(resampled, ChannelGroup.PRESSURE)
        self.levels_bend = compute_levels(resampled, ChannelGroup.BEND)
        self.logger.info("Quantization levels computed", {
            "trials": len(resampled),
            "force_A": f"{self.levels_force.A:.6g}",
            "bend_A": f"{self.levels_bend.A:.6g}",
        })
        return self.levels_force, self.levels_bend

    def _job(self, trial: Trial):
        if self.levels_force is None or self.levels_bend is None:
            raise ArgumentException("Quantization levels must be set before extraction")
        return (trial, self.levels_force, self.levels_bend, self.profiles, self.config.extraction,
                self.config.signal.smoothing_window, self.config.signal.rate)

    def extract(self, trial: Trial) -> TokenSequence:
        """Extract the token sequence of one trial."""
        try:
            return _extract_worker(self._job(trial))
        except PrimitiveSystemException:
            raise
        except Exception as e:
            self.logger.log_error(e, {"operation": "extract", "trial": trial.id})
            raise NumericException(f"Extraction failed for trial {trial.id}: {str(e)}")

    def extract_many(self, trials: Sequence[Trial], jobs: int = 1) -> List[TokenSequence]:
        """Extract several trials, in parallel processes when ``jobs`` > 1; order is preserved."""
        work = [self._job(trial) for trial in trials]
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                sequences = list(pool.map(_extract_worker, work))
        else:
            sequences = [self.extract(trial) for trial in trials]
        self.logger.log_pipeline_event("extraction_complete", {
            "trials": len(sequences),
            "tokens": sum(len(s) for s in sequences),
        })
        return sequences
