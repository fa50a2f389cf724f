"""
Synthetic trial generator.
Renders scripted primitive compositions for the eight manipulation actions
into labeled multi-channel trials with their ground-truth token sequences.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import DATASET_META_FILE, ACTION_LABELS, PRESSURE_CHANNELS, BEND_CHANNELS
from ..core.config import ConfigurationManager, SynthConfig, ExtractionConfig
from ..core.entities import (
    EventKind, PlateauLevel, PrimitiveFamily, Trial, Series, Token, TokenSequence, LevelSet,
    BellParams, BellInstance,
)
from ..core.exceptions import ArgumentException
from ..core.logging_service import LoggingService
from .profile_provider import ANALYTIC_PROFILE, ProfileSet, bell_values, ramp_values
from .primitive_extractor import merge_concurrent, detect_crossings, PrimitiveExtractor
from .trial_repository import TrialRepository, ManifestRow
from .evaluator import edit_similarity

logger = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
SUBJECT_STREAM = 0x5B1EC7
PLATEAU_FRACTIONS = {
    PlateauLevel.REST: 0.0,
    PlateauLevel.LOW: 0.3,
    PlateauLevel.MID: 0.6,
    PlateauLevel.HIGH: 1.0,
}
MAX_RESAMPLES = 10
EXTRA_GAP = 0.1  # seconds of random slack added to end-anchored offsets
TRUTH_RATE = 1000.0


def mix_seed(seed: int, index: int) -> int:
    """splitmix64 of ``seed XOR index``."""
    z = (int(seed) ^ int(index)) & MASK64
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class ScriptEvent:
    """
    One scripted primitive event.

    Reach/rotate events carry a velocity channel, a direction sign and a
    nominal magnitude; envelope events carry a target plateau. ``duration``
    is the bell length or the ramp length. The event starts ``offset``
    seconds after the end of everything before it (anchor ``end``) or after
    the start of the previous event (anchor ``start``).
    """
    kind: EventKind
    channel: str = ""
    sign: int = 1
    magnitude: float = 0.0
    duration: float = 0.4
    anchor: str = "end"
    offset: float = 0.2
    level: PlateauLevel = PlateauLevel.REST

    def __post_init__(self):
        if self.duration <= 0 or self.offset < 0:
            raise ArgumentException("Event duration must be positive and offset non-negative")
        if self.anchor not in ("end", "start"):
            raise ArgumentException(f"Unknown event anchor {self.anchor!r}")
        if self.kind in (EventKind.REACH, EventKind.ROTATE):
            expected = "v" if self.kind is EventKind.REACH else "w"
            if len(self.channel) != 2 or self.channel[0] != expected or self.channel[1] not in "xyz":
                raise ArgumentException(f"{self.kind.value} event needs a {expected}x/{expected}y/{expected}z channel")
            if self.magnitude <= 0 or self.sign not in (1, -1):
                raise ArgumentException("Motion events need a positive magnitude and a +1/-1 sign")

    @property
    def is_motion(self) -> bool:
        return self.kind in (EventKind.REACH, EventKind.ROTATE)

    def magnitude_range(self, jitter: float) -> Tuple[float, float]:
        return self.magnitude * (1 - jitter), self.magnitude * (1 + jitter)

    def duration_range(self, jitter: float) -> Tuple[float, float]:
        return self.duration * (1 - jitter), self.duration * (1 + jitter)


@dataclass(frozen=True)
class ActionScript:
    """A generative recipe for one action and the token sequence it yields."""
    label: str
    events: Tuple[ScriptEvent, ...]
    expected: TokenSequence = field(default_factory=TokenSequence)


@dataclass(frozen=True, eq=False)
class SubjectParams:
    """Per-subject variability: timing, size and strength factors plus channel templates."""
    subject: str
    duration_factor: float = 1.0
    magnitude_factor: float = 1.0
    strength_factor: float = 1.0
    grasp_template: np.ndarray = field(default_factory=lambda: np.full(18, 1.0 / np.sqrt(18)))
    bend_template: np.ndarray = field(default_factory=lambda: np.full(8, 1.0 / np.sqrt(8)))

    def __post_init__(self):
        for name in ("duration_factor", "magnitude_factor", "strength_factor"):
            if not 0.7 <= getattr(self, name) <= 1.3:
                raise ArgumentException(f"Subject {name} must lie in [0.7, 1.3]")
        for name, size in (("grasp_template", len(PRESSURE_CHANNELS)), ("bend_template", len(BEND_CHANNELS))):
            template = np.array(getattr(self, name), dtype=float)
            if template.shape != (size,) or np.any(template < 0) or abs(np.linalg.norm(template) - 1) > 1e-9:
                raise ArgumentException(f"Subject {name} must be a non-negative unit vector of size {size}")
            template.setflags(write=False)
            object.__setattr__(self, name, template)


@dataclass(frozen=True)
class NoiseSigmas:
    """
    Additive noise levels: velocity in m/s, angular velocity in rad/s,
    pressure and bend as fractions of their nominal composite averages.
    """
    velocity: float = 0.0
    angular: float = 0.0
    pressure: float = 0.0
    bend: float = 0.0

    @classmethod
    def from_config(cls, config: SynthConfig) -> "NoiseSigmas":
        return cls(config.velocity_noise, config.angular_noise, config.pressure_noise, config.bend_noise)

    def scaled(self, factor: float) -> "NoiseSigmas":
        return NoiseSigmas(self.velocity * factor, self.angular * factor, self.pressure * factor, self.bend * factor)


@dataclass(frozen=True)
class PlannedEvent:
    event: ScriptEvent
    t_s: float
    T: float
    magnitude: float = 0.0


def _reach(channel: str, sign: int, magnitude: float, duration: float = 0.8, **kwargs) -> ScriptEvent:
    kind = EventKind.REACH if channel.startswith("v") else EventKind.ROTATE
    return ScriptEvent(kind, channel, sign, magnitude, duration, **kwargs)


def _grasp(level: PlateauLevel, duration: float = 0.4, **kwargs) -> ScriptEvent:
    return ScriptEvent(EventKind.GRASP_ENVELOPE, duration=duration, level=level, **kwargs)


def _bend(level: PlateauLevel, duration: float = 0.4, **kwargs) -> ScriptEvent:
    return ScriptEvent(EventKind.BEND_ENVELOPE, duration=duration, level=level, **kwargs)


def _script_events() -> Dict[str, Tuple[ScriptEvent, ...]]:
    high, mid, rest = PlateauLevel.HIGH, PlateauLevel.MID, PlateauLevel.REST
    approach = _reach("vx", -1, 0.30)
    return {
        "OpenDrawer": (approach, _grasp(high), _reach("vx", 1, 0.25), _grasp(rest), _reach("vx", -1, 0.30)),
        "CloseDrawer": (approach, _grasp(high), _reach("vx", -1, 0.25), _grasp(rest), _reach("vx", 1, 0.30)),
        "OpenCabinet": (approach, _grasp(high), _reach("vx", 1, 0.25),
                        _reach("wz", 1, 1.2, anchor="start", offset=0.2),
                        _grasp(rest), _reach("vx", -1, 0.30)),
        "CloseCabinet": (approach, _grasp(high), _reach("vx", -1, 0.25),
                         _reach("wz", -1, 1.2, anchor="start", offset=0.2),
                         _grasp(rest), _reach("vx", 1, 0.30)),
        "PickPlace": (approach, _grasp(high), _reach("vz", 1, 0.20),
                      _reach("vy", 1, 0.30, anchor="start", offset=0.15),
                      _grasp(rest), _reach("vx", 1, 0.30)),
        "Spray": (approach, _grasp(mid), _bend(high), _bend(rest), _bend(high), _bend(rest),
                  _grasp(rest), _reach("vx", 1, 0.30)),
        "Stir": (approach, _grasp(high), _reach("wz", 1, 1.0, 0.6), _reach("wz", -1, 1.0, 0.6),
                 _reach("wz", 1, 1.0, 0.6), _reach("wz", -1, 1.0, 0.6), _grasp(rest), _reach("vx", 1, 0.30)),
        "Pour": (approach, _grasp(high), _reach("vz", 1, 0.20), _reach("wx", -1, 1.5),
                 _reach("wx", 1, 1.5, offset=0.5), _reach("vz", -1, 0.20), _grasp(rest), _reach("vx", 1, 0.30)),
    }


def default_subject(subject: str = "s0") -> SubjectParams:
    """Subject with unit factors and uniform templates."""
    return SubjectParams(subject)


def draw_subject(subject: str, rng: np.random.Generator, config: Optional[SynthConfig] = None) -> SubjectParams:
    """Random subject within the configured jitter bounds."""
    config = config or SynthConfig()
    grasp = rng.random(len(PRESSURE_CHANNELS)) + 0.1
    bend = rng.random(len(BEND_CHANNELS)) + 0.1
    return SubjectParams(
        subject=subject,
        duration_factor=float(rng.uniform(1 - config.duration_jitter, 1 + config.duration_jitter)),
        magnitude_factor=float(rng.uniform(1 - config.magnitude_jitter, 1 + config.magnitude_jitter)),
        strength_factor=float(rng.uniform(1 - config.strength_jitter, 1 + config.strength_jitter)),
        grasp_template=grasp / np.linalg.norm(grasp),
        bend_template=bend / np.linalg.norm(bend),
    )


def nominal_levels(config: Optional[SynthConfig] = None,
                   scripts: Optional[Sequence[ActionScript]] = None) -> Tuple[LevelSet, LevelSet]:
    """Force and bend levels implied by the scripts' nominal plateaus, one trial per action."""
    config = config or SynthConfig()
    events = [s.events for s in scripts] if scripts is not None else list(_script_events().values())

    def average_peak(kind: EventKind, amplitude: float) -> float:
        peaks = [max([PLATEAU_FRACTIONS[e.level] for e in evs if e.kind is kind] or [0.0]) for evs in events]
        return float(np.mean(peaks)) * amplitude

    return (LevelSet.from_average(average_peak(EventKind.GRASP_ENVELOPE, config.grasp_force)),
            LevelSet.from_average(average_peak(EventKind.BEND_ENVELOPE, config.bend_amplitude)))


def _plan(events: Sequence[ScriptEvent], subject: SubjectParams, rng: Optional[np.random.Generator],
          config: SynthConfig, extraction: ExtractionConfig) -> List[PlannedEvent]:
    """Lay the events out in time, drawing per-event jitter when ``rng`` is given."""
    jitter = config.event_jitter if rng is not None else 0.0

    def draw(lo: float, hi: float) -> float:
        return float(rng.uniform(lo, hi)) if rng is not None else (lo + hi) / 2

    planned: List[PlannedEvent] = []
    latest_end = config.lead_in
    for event in events:
        T = draw(*event.duration_range(jitter)) * subject.duration_factor
        magnitude = 0.0
        if event.is_motion:
            pruning = (extraction.min_reach_magnitude if event.kind is EventKind.REACH
                       else extraction.min_rotate_magnitude)
            threshold = config.magnitude_margin * pruning
            for _ in range(MAX_RESAMPLES + 1):
                magnitude = draw(*event.magnitude_range(jitter)) * subject.magnitude_factor
                if magnitude >= threshold:
                    break
            else:
                magnitude = threshold
                logger.warning("Event %s%s magnitude stayed below %.3g after %d draws; using %.3g",
                               event.channel, "+" if event.sign > 0 else "-", threshold,
                               MAX_RESAMPLES, magnitude)

        if not planned:
            t_s = config.lead_in
        elif event.anchor == "start":
            t_s = planned[-1].t_s + event.offset
        else:
            t_s = latest_end + event.offset + (draw(0.0, 2 * EXTRA_GAP) if rng is not None else 0.0)
        planned.append(PlannedEvent(event, t_s, T, magnitude))
        latest_end = max(latest_end, t_s + T)
    return planned


def _envelope(times: np.ndarray, planned: Sequence[PlannedEvent], kind: EventKind, amplitude: float,
              profile) -> np.ndarray:
    values = np.zeros_like(times)
    current = 0.0
    for item in planned:
        if item.event.kind is not kind:
            continue
        target = PLATEAU_FRACTIONS[item.event.level] * amplitude
        after = times >= item.t_s
        values[after] = ramp_values(times[after], item.t_s, item.T, current, target, profile)
        current = target
    return values


def _truth_tokens(planned: Sequence[PlannedEvent], force_amplitude: float, bend_amplitude: float,
                  levels: Tuple[LevelSet, LevelSet], duration: float, profile) -> List[Token]:
    instances = {PrimitiveFamily.REACH: [], PrimitiveFamily.ROTATE: []}
    for item in planned:
        if item.event.is_motion:
            params = BellParams(item.event.channel[1], item.event.sign, item.magnitude, item.t_s, item.T)
            instance = BellInstance(params, item.event.channel)
            instances[instance.family].append(instance)

    tokens: List[Token] = []
    for family, found in instances.items():
        tokens += merge_concurrent(found, family)

    dense = np.arange(int(np.floor(duration * TRUTH_RATE)) + 1) / TRUTH_RATE
    for kind, family, amplitude, level_set in (
            (EventKind.GRASP_ENVELOPE, PrimitiveFamily.GRASP, force_amplitude, levels[0]),
            (EventKind.BEND_ENVELOPE, PrimitiveFamily.BEND, bend_amplitude, levels[1])):
        envelope = _envelope(dense, planned, kind, amplitude, profile)
        tokens += detect_crossings(Series(0.0, TRUTH_RATE, envelope), level_set, family, 1)

    tokens.sort(key=lambda token: (token.t_s, token.name))
    return tokens


def builtin_scripts(config: Optional[SynthConfig] = None,
                    extraction: Optional[ExtractionConfig] = None) -> List[ActionScript]:
    """The eight action scripts with their nominal expected token sequences."""
    config = config or SynthConfig()
    extraction = extraction or ExtractionConfig()
    levels = nominal_levels(config)
    subject = default_subject()
    scripts = []
    for label, events in sorted(_script_events().items()):
        planned = _plan(events, subject, None, config, extraction)
        duration = max(p.t_s + p.T for p in planned) + config.lead_out
        tokens = _truth_tokens(planned, config.grasp_force, config.bend_amplitude, levels, duration,
                               ANALYTIC_PROFILE)
        scripts.append(ActionScript(label, events, TokenSequence(tuple(tokens), action=label)))
    return scripts


def render_trial(script: ActionScript, subject: SubjectParams, noise: NoiseSigmas, rate: float, seed: int,
                 config: Optional[SynthConfig] = None, extraction: Optional[ExtractionConfig] = None,
                 levels: Optional[Tuple[LevelSet, LevelSet]] = None, profiles: Optional[ProfileSet] = None,
                 trial_id: str = "") -> Tuple[Trial, TokenSequence]:
    """
    Render one labeled trial and its ground-truth token sequence.

    Args:
        script: Action script
        subject: Subject variability
        noise: Additive noise levels
        rate: Sampling rate in Hz (>= 20)
        seed: Trial seed; rendering is a pure function of (script, subject, seed)
        config: Generator parameters
        extraction: Pruning thresholds the jittered magnitudes must clear
        levels: Force/bend levels used for the ground-truth crossings
            (nominal levels by default)
        profiles: Bell profiles used for rendering
        trial_id: Identifier of the trial

    Returns:
        (Trial, ground-truth TokenSequence)
    """
    if rate < 20:
        raise ArgumentException(f"Synthetic trials need a rate of at least 20 Hz, got {rate}")
    config = config or SynthConfig()
    extraction = extraction or ExtractionConfig()
    profiles = profiles or ProfileSet()
    levels = levels or nominal_levels(config)
    rng = np.random.default_rng(seed)
    trial_id = trial_id or f"{subject.subject}_{script.label}"

    planned = _plan(script.events, subject, rng, config, extraction)
    duration = max(p.t_s + p.T for p in planned) + config.lead_out
    times = np.arange(int(np.floor(duration * rate + 1e-9)) + 1) / rate

    motion = {"v": np.zeros((times.size, 3)), "w": np.zeros((times.size, 3))}
    for item in planned:
        if not item.event.is_motion:
            continue
        profile = profiles.for_channel(item.event.channel)
        peak = item.event.sign * item.magnitude * profile.peak_value / item.T
        column = "xyz".index(item.event.channel[1])
        motion[item.event.channel[0]][:, column] += bell_values(
            times, peak, item.t_s + profile.peak_tau * item.T, item.T, profile)

    force_amplitude = config.grasp_force * subject.strength_factor
    bend_amplitude = config.bend_amplitude * subject.strength_factor
    force = _envelope(times, planned, EventKind.GRASP_ENVELOPE, force_amplitude, profiles.reach)
    bend = _envelope(times, planned, EventKind.BEND_ENVELOPE, bend_amplitude, profiles.reach)
    F = np.clip(force[:, None] * subject.grasp_template[None, :], 0.0, None)
    b = np.clip(bend[:, None] * subject.bend_template[None, :], 0.0, None)

    v, w = motion["v"], motion["w"]
    nominal_force, nominal_bend = nominal_levels(config)
    if noise.velocity > 0:
        v = v + rng.normal(0.0, noise.velocity, v.shape)
    if noise.angular > 0:
        w = w + rng.normal(0.0, noise.angular, w.shape)
    if noise.pressure > 0:
        sigma = noise.pressure * nominal_force.A / np.sqrt(F.shape[1])
        F = np.clip(F + rng.normal(0.0, sigma, F.shape), 0.0, None)
    if noise.bend > 0:
        sigma = noise.bend * nominal_bend.A / np.sqrt(b.shape[1])
        b = np.clip(b + rng.normal(0.0, sigma, b.shape), 0.0, None)

    trial = Trial(id=trial_id, subject=subject.subject, t=times, v=v, w=w, F=F, b=b, rate=float(rate),
                  action_label=script.label)
    tokens = _truth_tokens(planned, force_amplitude, bend_amplitude, levels, duration, profiles.reach)
    return trial, TokenSequence(tuple(tokens), trial_id, subject.subject, script.label)


@dataclass
class SyntheticDataset:
    """Generated trials with their ground truth and manifest rows, in generation order."""
    trials: List[Trial] = field(default_factory=list)
    truths: List[TokenSequence] = field(default_factory=list)
    rows: List[ManifestRow] = field(default_factory=list)
    subjects: List[SubjectParams] = field(default_factory=list)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def labels(self) -> List[str]:
        return [trial.action_label for trial in self.trials]


def generate_dataset(n_subjects: int, trials_per_action: int, noise: NoiseSigmas, seed: int,
                     config: Optional[SynthConfig] = None, extraction: Optional[ExtractionConfig] = None,
                     rate: float = 50.0, test_subjects: Sequence[str] = (),
                     scripts: Optional[Sequence[ActionScript]] = None,
                     levels: Optional[Tuple[LevelSet, LevelSet]] = None) -> SyntheticDataset:
    """
    Render ``trials_per_action`` trials of every script for each of ``n_subjects`` random subjects.

    Subjects are named s1..sN; trial k of a subject/action pair is
    ``<subject>_<action>_<k>``. The trial with global index i uses seed
    ``mix_seed(seed, i)``.
    """
    if n_subjects < 2:
        raise ArgumentException(f"A dataset needs at least 2 subjects, got {n_subjects}")
    if trials_per_action < 1:
        raise ArgumentException(f"trials_per_action must be >= 1, got {trials_per_action}")
    config = config or SynthConfig()
    extraction = extraction or ExtractionConfig()
    scripts = list(scripts) if scripts is not None else builtin_scripts(config, extraction)
    levels = levels or nominal_levels(config)
    test_set = set(test_subjects)

    dataset = SyntheticDataset(seed=seed)
    subject_seed = mix_seed(seed, SUBJECT_STREAM)
    index = 0
    for s in range(1, n_subjects + 1):
        subject = draw_subject(f"s{s}", np.random.default_rng(mix_seed(subject_seed, s)), config)
        dataset.subjects.append(subject)
        for script in scripts:
            for k in range(1, trials_per_action + 1):
                trial_seed = mix_seed(seed, index)
                trial_id = f"{subject.subject}_{script.label}_{k:02d}"
                trial, truth = render_trial(script, subject, noise, rate, trial_seed, config, extraction,
                                            levels, trial_id=trial_id)
                dataset.trials.append(trial)
                dataset.truths.append(truth)
                dataset.rows.append(ManifestRow(
                    trial_id, subject.subject, script.label, trial_seed,
                    "test" if subject.subject in test_set else "train", " ".join(truth.names)))
                index += 1
    return dataset


def write_dataset(dataset: SyntheticDataset, out_dir, config_summary: Optional[Dict] = None) -> TrialRepository:
    """Write trial CSVs, the manifest and ``dataset.meta``."""
    repository = TrialRepository(out_dir)
    repository.ensure_directory()
    for trial in dataset.trials:
        repository.save_trial(trial)
    repository.write_manifest(dataset.rows)

    lines = [f"seed={dataset.seed}", f"trials={len(dataset)}",
             f"subjects={','.join(s.subject for s in dataset.subjects)}"]
    for section, values in (config_summary or {}).items():
        for key, value in values.items():
            lines.append(f"{section}.{key}={value}")
    TrialRepository._write_text(Path(out_dir) / DATASET_META_FILE, "\n".join(lines) + "\n")
    return repository


def load_dataset(directory, default_rate: float = 50.0) -> List[Tuple[ManifestRow, Trial]]:
    """Load every manifest trial of a dataset directory."""
    return TrialRepository(directory).load_dataset(default_rate)


def robustness_curve(noise_factors: Sequence[float], seed: int, n_subjects: int = 2, trials_per_action: int = 1,
                     config: Optional[ConfigurationManager] = None) -> List[Tuple[float, float]]:
    """
    Mean edit similarity between extracted and true sequences as noise grows.

    Every factor scales the configured noise sigmas and re-renders the same
    seeded trials, so only the noise differs between points.
    """
    config = config or ConfigurationManager.get_instance()
    base = NoiseSigmas.from_config(config.synth)
    curve = []
    for factor in noise_factors:
        dataset = generate_dataset(n_subjects, trials_per_action, base.scaled(factor), seed, config.synth,
                                   config.extraction, config.signal.rate)
        extractor = PrimitiveExtractor(config)
        extractor.fit_levels(dataset.trials)
        extracted = extractor.extract_many(dataset.trials)
        scores = [edit_similarity(e.names, t.names) for e, t in zip(extracted, dataset.truths)]
        curve.append((float(factor), float(np.mean(scores))))
    return curve


class ActionSynthesizer:
    """
    Dataset generator bound to the configuration.
    Produces the synthetic datasets used by the command line.
    """

    def __init__(self, config: Optional[ConfigurationManager] = None):
        self.config = config or ConfigurationManager.get_instance()
        self.logger = LoggingService("synth")

    def generate(self, seed: Optional[int] = None, noise_scale: float = 1.0,
                 n_subjects: Optional[int] = None, trials_per_action: Optional[int] = None) -> SyntheticDataset:
        synth = self.config.synth
        seed = self.config.system.seed if seed is None else seed
        dataset = generate_dataset(
            n_subjects or synth.n_subjects,
            trials_per_action or synth.trials_per_action,
            NoiseSigmas.from_config(synth).scaled(noise_scale),
            seed, synth, self.config.extraction, self.config.signal.rate,
            test_subjects=self.config.eval.test_subject_set(),
        )
        self.logger.log_pipeline_event("dataset_generated", {
            "trials": len(dataset),
            "subjects": len(dataset.subjects),
            "seed": seed,
        })
        return dataset

    def write(self, dataset: SyntheticDataset, out_dir) -> int:
        write_dataset(dataset, out_dir, self.config.get_config_summary())
        self.logger.info(f"Dataset written to {out_dir}", {"trials": len(dataset)})
        return len(dataset)


__all__ = [
    "ACTION_LABELS", "ScriptEvent", "ActionScript", "SubjectParams", "NoiseSigmas", "SyntheticDataset",
    "ActionSynthesizer", "builtin_scripts", "render_trial", "generate_dataset", "write_dataset",
    "load_dataset", "nominal_levels", "robustness_curve", "mix_seed", "default_subject", "draw_subject",
]
