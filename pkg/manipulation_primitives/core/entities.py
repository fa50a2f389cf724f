"""
Core domain entities for the manipulation primitives system.
These are the fundamental objects that represent recordings, primitive
occurrences and the symbolic token stream fed to sequence models.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, List, Dict, Tuple, Iterator

import numpy as np

from ..config import (
    BASE_SYMBOLS, COMPOUND_SEPARATOR, LEVEL_FRACTIONS,
    VELOCITY_CHANNELS, ANGULAR_CHANNELS,
)
from .exceptions import ArgumentException, ValidationException, NonFiniteValueException, VocabularyException


class ChannelGroup(Enum):
    """Enumeration of composite channel groups."""
    PRESSURE = "pressure"
    BEND = "bend"


class PrimitiveFamily(Enum):
    """Enumeration of primitive families of the alphabet."""
    REACH = "reach"
    ROTATE = "rotate"
    GRASP = "grasp/release"
    BEND = "bend/extend"


class Topology(Enum):
    """Enumeration of HMM transition topologies."""
    BAKIS = "bakis"
    ERGODIC = "ergodic"


class EventKind(Enum):
    """Enumeration of scripted event kinds."""
    REACH = "reach"
    ROTATE = "rotate"
    GRASP_ENVELOPE = "grasp-envelope"
    BEND_ENVELOPE = "bend-envelope"


class PlateauLevel(Enum):
    """Enumeration of envelope plateau targets."""
    REST = "rest"
    LOW = "low"
    MID = "mid"
    HIGH = "high"


_FAMILY_BY_PREFIX = {
    "V": PrimitiveFamily.REACH,
    "W": PrimitiveFamily.ROTATE,
    "G": PrimitiveFamily.GRASP,
    "R": PrimitiveFamily.GRASP,
    "B": PrimitiveFamily.BEND,
    "E": PrimitiveFamily.BEND,
}


def symbol_family(symbol: str) -> PrimitiveFamily:
    """Return the primitive family of a base symbol."""
    if symbol not in BASE_SYMBOLS:
        raise VocabularyException(f"Unknown primitive symbol: {symbol!r}")
    return _FAMILY_BY_PREFIX[symbol[0]]


def channel_symbol(channel: str, sign: int) -> str:
    """Map a velocity channel and a sign to its base symbol, e.g. ('vx', -1) -> 'Vx-'."""
    if channel not in VELOCITY_CHANNELS + ANGULAR_CHANNELS:
        raise ArgumentException(f"Not a velocity channel: {channel!r}")
    return f"{channel[0].upper()}{channel[1]}{'+' if sign > 0 else '-'}"


def _frozen_array(values, shape_tail: Tuple[int, ...], name: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != 1 + len(shape_tail) or array.shape[1:] != shape_tail:
        raise ArgumentException(f"{name} must have shape (n,{','.join(map(str, shape_tail))}), got {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Frame:
    """One timestamped multi-channel sample."""
    t: float
    v: Tuple[float, float, float]
    w: Tuple[float, float, float]
    F: Tuple[float, ...]
    b: Tuple[float, ...]


@dataclass(frozen=True)
class Trial:
    """
    A timestamped multi-channel recording.

    Channels are held column-wise: ``v``/``w`` are (n, 3), ``F`` is (n, 18)
    and ``b`` is (n, 8). Arrays are read-only after construction.
    """
    id: str
    subject: str
    t: np.ndarray
    v: np.ndarray
    w: np.ndarray
    F: np.ndarray
    b: np.ndarray
    rate: float
    action_label: Optional[str] = None

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ArgumentException("Trial must contain at least one frame", {"trial": self.id})
        t.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", _frozen_array(self.v, (3,), "v"))
        object.__setattr__(self, "w", _frozen_array(self.w, (3,), "w"))
        object.__setattr__(self, "F", _frozen_array(self.F, (18,), "F"))
        object.__setattr__(self, "b", _frozen_array(self.b, (8,), "b"))

        n = t.size
        for name in ("v", "w", "F", "b"):
            if getattr(self, name).shape[0] != n:
                raise ArgumentException(f"Channel block {name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if n > 1 and np.any(np.diff(t) <= 0):
            raise ValidationException("Trial timestamps must be strictly increasing", {"trial": self.id})
        if np.any(self.F < 0) or np.any(self.b < 0):
            raise ValidationException("Pressure and bend channels must be non-negative", {"trial": self.id})
        if self.rate <= 0:
            raise ArgumentException(f"Trial rate must be positive, got {self.rate}")

    @property
    def n_frames(self) -> int:
        return int(self.t.size)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def frames(self) -> List[Frame]:
        """Row-wise view of the recording."""
        return [
            Frame(float(self.t[i]), tuple(self.v[i]), tuple(self.w[i]), tuple(self.F[i]), tuple(self.b[i]))
            for i in range(self.n_frames)
        ]

    def channel(self, name: str) -> np.ndarray:
        """Return one velocity or angular-velocity channel by name."""
        if name in VELOCITY_CHANNELS:
            return self.v[:, VELOCITY_CHANNELS.index(name)]
        if name in ANGULAR_CHANNELS:
            return self.w[:, ANGULAR_CHANNELS.index(name)]
        raise ArgumentException(f"Unknown channel: {name!r}")

    def group(self, group: ChannelGroup) -> np.ndarray:
        """Return the (n, k) block of a composite channel group."""
        if group is ChannelGroup.PRESSURE:
            return self.F
        if group is ChannelGroup.BEND:
            return self.b
        raise ArgumentException(f"Unknown channel group: {group!r}")

    def is_uniform(self, tolerance: float = 1e-9) -> bool:
        """Check the uniform-spacing invariant of resampled trials."""
        if self.n_frames < 2:
            return True
        return bool(np.all(np.abs(np.diff(self.t) - 1.0 / self.rate) < tolerance))

    def with_channels(self, **changes) -> "Trial":
        """Return a copy with some fields replaced."""
        return replace(self, **changes)


@dataclass(frozen=True)
class Series:
    """A uniformly sampled scalar signal."""
    t0: float
    rate: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ArgumentException("Series values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueException("Series values must be finite")
        if self.rate <= 0:
            raise ArgumentException(f"Series rate must be positive, got {self.rate}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.values.size) / self.rate

    def time_at(self, index: float) -> float:
        return self.t0 + index / self.rate


@dataclass(frozen=True)
class BellParams:
    """Parameters of one reach/rotate bell: axis, signed direction, magnitude, start and duration."""
    axis: str  # x, y or z
    sign: int  # +1 or -1
    magnitude: float  # meters (reach) or radians (rotate)
    t_s: float
    T: float

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise ArgumentException(f"Bell axis must be x, y or z, got {self.axis!r}")
        if self.sign not in (1, -1):
            raise ArgumentException(f"Bell sign must be +1 or -1, got {self.sign!r}")
        if not self.T > 0:
            raise ArgumentException(f"Bell duration must be positive, got {self.T}")
        if not self.magnitude > 0:
            raise ArgumentException(f"Bell magnitude must be positive, got {self.magnitude}")

    @property
    def t_end(self) -> float:
        return self.t_s + self.T


@dataclass(frozen=True)
class BellInstance:
    """One fitted occurrence of a reach/rotate primitive."""
    params: BellParams
    channel: str  # vx, vy, vz, wx, wy, wz
    residual: float = 0.0

    @property
    def family(self) -> PrimitiveFamily:
        return PrimitiveFamily.REACH if self.channel.startswith("v") else PrimitiveFamily.ROTATE

    @property
    def symbol(self) -> str:
        return channel_symbol(self.channel, self.params.sign)


@dataclass(frozen=True)
class LevelSet:
    """Quantization thresholds at 15/45/75% of a training-set average maximum."""
    A: float
    low: float
    mid: float
    high: float

    def __post_init__(self):
        if not 0 < self.low < self.mid < self.high:
            raise ArgumentException(
                f"Levels must satisfy 0 < low < mid < high, got {self.low}, {self.mid}, {self.high}")

    @classmethod
    def from_average(cls, average: float) -> "LevelSet":
        return cls(
            A=average,
            low=LEVEL_FRACTIONS["low"] * average,
            mid=LEVEL_FRACTIONS["mid"] * average,
            high=LEVEL_FRACTIONS["high"] * average,
        )

    def as_dict(self) -> Dict[str, float]:
        return {"A": self.A, "low": self.low, "mid": self.mid, "high": self.high}

    def items(self) -> List[Tuple[str, float]]:
        """Levels in ascending order as (suffix, value) pairs."""
        return [("l", self.low), ("m", self.mid), ("h", self.high)]


@dataclass(frozen=True)
class Token:
    """A (possibly compound) primitive-feature symbol with its start time."""
    symbols: Tuple[str, ...]
    t_s: float = 0.0

    def __post_init__(self):
        symbols = tuple(self.symbols)
        if not 1 <= len(symbols) <= 3:
            raise VocabularyException(f"A token carries 1 to 3 symbols, got {symbols}")
        families = {symbol_family(s) for s in symbols}
        if len(symbols) > 1:
            if len(families) != 1 or next(iter(families)) not in (PrimitiveFamily.REACH, PrimitiveFamily.ROTATE):
                raise VocabularyException(f"Compound tokens must come from one motion family: {symbols}")
            axes = [s[1] for s in symbols]
            if len(set(axes)) != len(axes):
                raise VocabularyException(f"Compound tokens cannot repeat an axis: {symbols}")
        if list(symbols) != sorted(symbols) or len(set(symbols)) != len(symbols):
            raise VocabularyException(f"Token symbols must be strictly ordered: {symbols}")
        object.__setattr__(self, "symbols", symbols)

    @classmethod
    def of(cls, symbols, t_s: float = 0.0) -> "Token":
        """Build a token canonicalizing symbol order."""
        return cls(tuple(sorted(symbols)), t_s)

    @classmethod
    def parse(cls, name: str, t_s: float = 0.0) -> "Token":
        """Parse a canonical token name such as ``Vx-&Vz+``."""
        parts = name.split(COMPOUND_SEPARATOR)
        for part in parts:
            if part not in BASE_SYMBOLS:
                raise VocabularyException(f"Unknown primitive symbol {part!r} in token {name!r}")
        token = cls(tuple(parts), t_s)
        return token

    @property
    def name(self) -> str:
        return COMPOUND_SEPARATOR.join(self.symbols)

    @property
    def family(self) -> PrimitiveFamily:
        return symbol_family(self.symbols[0])

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class TokenSequence:
    """The ordered token stream extracted from (or scripted for) one trial."""
    tokens: Tuple[Token, ...] = field(default_factory=tuple)
    trial_id: str = ""
    subject: str = ""
    action: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    @property
    def names(self) -> List[str]:
        return [token.name for token in self.tokens]

    @classmethod
    def from_names(cls, names: List[str], trial_id: str = "", subject: str = "",
                   action: Optional[str] = None) -> "TokenSequence":
        return cls(tuple(Token.parse(n) for n in names), trial_id, subject, action)

    def to_line(self) -> str:
        """Serialize as ``trial_id,subject,action<TAB>tok tok ...``."""
        return f"{self.trial_id},{self.subject},{self.action or ''}\t{' '.join(self.names)}"
