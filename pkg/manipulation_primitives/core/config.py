"""
Configuration management for the manipulation primitives system.
Uses Singleton pattern to ensure single configuration instance.
"""

import os
from dataclasses import dataclass, fields, asdict
from typing import Dict, Any, Optional, List, Tuple

from .exceptions import ConfigurationException


@dataclass
class SignalConfig:
    """Signal ingestion and conditioning parameters."""
    rate: float = 50.0  # Hz, common rate between 15 fps cameras and 100 Hz glove
    smoothing_window: int = 5  # samples, 100 ms at 50 Hz


@dataclass
class ProfileConfig:
    """Bell-shaped profile parameters."""
    kind: str = "analytic"  # analytic or tabulated
    reach_table: str = ""
    rotate_table: str = ""  # falls back to reach_table when empty
    table_smoothing_window: int = 1


@dataclass
class ExtractionConfig:
    """Primitive-feature extraction parameters."""
    min_reach_magnitude: float = 0.10  # meters
    min_rotate_magnitude: float = 0.5  # radians
    debounce: int = 5  # samples
    peak_min_prominence: float = 0.2  # fraction of channel max
    fit_tolerance: float = 1e-4  # seconds, golden-section bracket width
    max_sweeps: int = 50
    improvement_tolerance: float = 1e-6  # MSE
    max_bell_duration: float = 2.0  # seconds; sets the absolute peak floor of reach/rotate channels


@dataclass
class HmmConfig:
    """Sequence model training and selection parameters."""
    n_min: int = 3
    n_max: int = 10
    topologies: str = "bakis,ergodic"
    restarts: int = 5
    smoothing: float = 0.01
    max_iter: int = 100
    tol: float = 1e-4
    selection: str = "train"  # train or heldout
    holdout_fraction: float = 0.25
    # Raw Gaussian-mixture baseline
    mixtures: int = 2
    raw_features: str = "reduced"  # reduced (8 dims) or full (32 dims)
    raw_decimate: int = 5
    raw_n_min: int = 3
    raw_n_max: int = 5
    raw_restarts: int = 2
    raw_max_iter: int = 40

    def topology_list(self) -> List[str]:
        return [t.strip() for t in self.topologies.split(",") if t.strip()]

    def n_range(self) -> List[int]:
        return list(range(self.n_min, self.n_max + 1))

    def raw_n_range(self) -> List[int]:
        return list(range(self.raw_n_min, self.raw_n_max + 1))


@dataclass
class SynthConfig:
    """Synthetic trial generator parameters."""
    n_subjects: int = 5
    trials_per_action: int = 6
    velocity_noise: float = 0.02  # m/s
    angular_noise: float = 0.05  # rad/s
    pressure_noise: float = 0.02  # fraction of the nominal force average
    bend_noise: float = 0.02  # fraction of the nominal bend average
    duration_jitter: float = 0.3  # subject factor bound, +-30%
    magnitude_jitter: float = 0.3
    strength_jitter: float = 0.05
    event_jitter: float = 0.15  # per-event draw around the script's nominal value
    grasp_force: float = 10.0  # composite pressure at the high plateau
    bend_amplitude: float = 8.0  # composite bend at the high plateau
    lead_in: float = 0.5  # seconds of rest before the first event
    lead_out: float = 0.5
    magnitude_margin: float = 1.2  # drawn reach/rotate magnitudes stay at or above margin x pruning threshold


@dataclass
class EvalConfig:
    """Evaluation parameters."""
    test_subjects: str = "s4,s5"
    folds: str = ""  # e.g. "s4,s5;s1,s2;s2,s3"
    significance: float = 0.05

    def test_subject_set(self) -> List[str]:
        return [s.strip() for s in self.test_subjects.split(",") if s.strip()]

    def fold_list(self) -> List[Tuple[str, ...]]:
        folds = []
        for chunk in self.folds.split(";"):
            members = tuple(s.strip() for s in chunk.split(",") if s.strip())
            if members:
                folds.append(members)
        return folds


@dataclass
class SystemConfig:
    """System configuration parameters."""
    seed: int = 20240611
    jobs: int = 1
    log_level: str = "INFO"
    log_file: str = ""
    max_log_size_mb: int = 20
    log_backup_count: int = 3


class ConfigurationManager:
    """
    Configuration manager using Singleton pattern.
    Manages all configuration parameters for the recognition pipeline.
    """

    _instance: Optional['ConfigurationManager'] = None
    _initialized: bool = False

    _SECTIONS = ("signal", "profile", "extraction", "hmm", "synth", "eval", "system")

    def __new__(cls) -> 'ConfigurationManager':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if not self._initialized:
            self._signal_config = SignalConfig()
            self._profile_config = ProfileConfig()
            self._extraction_config = ExtractionConfig()
            self._hmm_config = HmmConfig()
            self._synth_config = SynthConfig()
            self._eval_config = EvalConfig()
            self._system_config = SystemConfig()

            self._initialized = True

    @classmethod
    def get_instance(cls) -> 'ConfigurationManager':
        """Get the singleton instance."""
        if cls._instance is None:
            cls._instance = cls()
        return cls._instance

    @classmethod
    def reset_instance(cls) -> 'ConfigurationManager':
        """Drop the singleton and return a fresh instance with defaults."""
        cls._instance = None
        cls._initialized = False
        instance = cls()
        return instance

    def load_from_environment(self) -> None:
        """Load configuration overrides from environment variables."""
        try:
            log_level = os.getenv('MP_LOG_LEVEL')
            if log_level:
                self._system_config.log_level = log_level.upper()

            log_file = os.getenv('MP_LOG_FILE')
            if log_file:
                self._system_config.log_file = log_file

            seed = os.getenv('MP_SEED')
            if seed:
                self._system_config.seed = int(seed)

            jobs = os.getenv('MP_JOBS')
            if jobs:
                self._system_config.jobs = int(jobs)

        except ValueError as e:
            raise ConfigurationException(f"Failed to load environment configuration: {str(e)}")

    def load_from_file(self, config_file_path: str) -> None:
        """
        Load configuration from a flat ``section.key = value`` text file.

        Args:
            config_file_path: Path of the configuration file

        Raises:
            ConfigurationException: On unreadable files, malformed lines,
                unknown keys or values that do not coerce
        """
        try:
            with open(config_file_path, 'r', encoding='utf-8') as f:
                lines = f.readlines()
        except OSError as e:
            raise ConfigurationException(f"Failed to read configuration file {config_file_path}: {str(e)}")

        for line_no, raw in enumerate(lines, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigurationException(
                    f"{config_file_path}:{line_no}: expected 'key = value'", {"line": raw.rstrip()})
            key, value = (part.strip() for part in line.split('=', 1))
            self.set_value(key, value)

    def set_value(self, dotted_key: str, value: Any) -> None:
        """Set one ``section.key`` value, coercing it to the default's type."""
        if '.' not in dotted_key:
            raise ConfigurationException(f"Unknown configuration key: {dotted_key}")
        section_name, key = dotted_key.split('.', 1)
        if section_name not in self._SECTIONS:
            raise ConfigurationException(f"Unknown configuration key: {dotted_key}")
        section = getattr(self, section_name)
        known = {f.name: f for f in fields(section)}
        if key not in known:
            raise ConfigurationException(f"Unknown configuration key: {dotted_key}")

        current = getattr(section, key)
        setattr(section, key, self._coerce(dotted_key, value, type(current)))

    @staticmethod
    def _coerce(dotted_key: str, value: Any, target: type) -> Any:
        if target is str:
            return str(value).strip()
        if isinstance(value, target) and (target is bool or not isinstance(value, bool)):
            return value
        text = str(value).strip()
        try:
            if target is bool:
                lowered = text.lower()
                if lowered in ('true', '1', 'yes', 'on'):
                    return True
                if lowered in ('false', '0', 'no', 'off'):
                    return False
                raise ValueError(text)
            if target is int:
                return int(text)
            if target is float:
                return float(text)
        except ValueError:
            raise ConfigurationException(
                f"Invalid value for {dotted_key}: {text!r} (expected {target.__name__})")
        return value

    # Property getters for each configuration section
    @property
    def signal(self) -> SignalConfig:
        return self._signal_config

    @property
    def profile(self) -> ProfileConfig:
        return self._profile_config

    @property
    def extraction(self) -> ExtractionConfig:
        return self._extraction_config

    @property
    def hmm(self) -> HmmConfig:
        return self._hmm_config

    @property
    def synth(self) -> SynthConfig:
        return self._synth_config

    @property
    def eval(self) -> EvalConfig:
        return self._eval_config

    @property
    def system(self) -> SystemConfig:
        return self._system_config

    def validate_configuration(self) -> bool:
        """Validate that all configuration values are usable."""
        problems = []

        if self.signal.rate <= 0:
            problems.append("signal.rate must be positive")
        if self.signal.smoothing_window < 1 or self.signal.smoothing_window % 2 == 0:
            problems.append("signal.smoothing_window must be a positive odd number")
        if self.profile.kind not in ("analytic", "tabulated"):
            problems.append("profile.kind must be analytic or tabulated")
        if self.profile.kind == "tabulated" and not self.profile.reach_table:
            problems.append("profile.reach_table is required for tabulated profiles")

        ex = self.extraction
        for name in ("min_reach_magnitude", "min_rotate_magnitude", "peak_min_prominence",
                     "fit_tolerance", "improvement_tolerance", "max_bell_duration"):
            if getattr(ex, name) <= 0:
                problems.append(f"extraction.{name} must be positive")
        if ex.debounce < 1 or ex.max_sweeps < 1:
            problems.append("extraction.debounce and extraction.max_sweeps must be >= 1")

        hmm = self.hmm
        if hmm.n_min < 1 or hmm.n_max < hmm.n_min:
            problems.append("hmm.n_min/n_max must describe a non-empty range starting at >= 1")
        if hmm.raw_n_min < 1 or hmm.raw_n_max < hmm.raw_n_min:
            problems.append("hmm.raw_n_min/raw_n_max must describe a non-empty range")
        unknown_topologies = set(hmm.topology_list()) - {"bakis", "ergodic"}
        if unknown_topologies or not hmm.topology_list():
            problems.append(f"hmm.topologies must list bakis and/or ergodic, got {hmm.topologies!r}")
        if hmm.restarts < 1 or hmm.raw_restarts < 1:
            problems.append("hmm.restarts must be >= 1")
        if hmm.max_iter < 1 or hmm.raw_max_iter < 1:
            problems.append("hmm.max_iter and hmm.raw_max_iter must be >= 1")
        if hmm.smoothing <= 0:
            problems.append("hmm.smoothing must be positive")
        if hmm.selection not in ("train", "heldout"):
            problems.append("hmm.selection must be train or heldout")
        if not 0 < hmm.holdout_fraction < 1:
            problems.append("hmm.holdout_fraction must lie in (0, 1)")
        if hmm.mixtures < 1 or hmm.raw_decimate < 1:
            problems.append("hmm.mixtures and hmm.raw_decimate must be >= 1")
        if hmm.raw_features not in ("reduced", "full"):
            problems.append("hmm.raw_features must be reduced or full")

        sy = self.synth
        if sy.n_subjects < 2:
            problems.append("synth.n_subjects must be >= 2")
        if sy.trials_per_action < 1:
            problems.append("synth.trials_per_action must be >= 1")
        for name in ("duration_jitter", "magnitude_jitter", "strength_jitter"):
            if not 0 <= getattr(sy, name) <= 0.3:
                problems.append(f"synth.{name} must lie in [0, 0.3]")
        for name in ("velocity_noise", "angular_noise", "pressure_noise", "bend_noise", "event_jitter"):
            if getattr(sy, name) < 0:
                problems.append(f"synth.{name} must be non-negative")
        if sy.magnitude_margin < 1:
            problems.append("synth.magnitude_margin must be >= 1")

        if self.system.jobs < 1:
            problems.append("system.jobs must be >= 1")

        if problems:
            raise ConfigurationException("Invalid configuration: " + "; ".join(problems))

        return True

    def get_config_summary(self) -> Dict[str, Any]:
        """Get a summary of current configuration."""
        return {name: asdict(getattr(self, name)) for name in self._SECTIONS}
