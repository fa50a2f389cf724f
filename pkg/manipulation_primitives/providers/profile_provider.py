"""
Bell-shaped speed profiles for reach and rotate primitives.
Provides the analytic minimum-jerk profile, tabulated profiles loaded from
CSV, and rendering of parameterized bells and half-bell ramps.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from ..core.config import ProfileConfig
from ..core.entities import BellParams, Series
from ..core.exceptions import (
    ArgumentException, ValidationException, SchemaException, DataRepositoryException,
)
from ..core.interfaces import IProfileShape
from .signal_processor import smooth

logger = logging.getLogger(__name__)

MIN_JERK_PEAK = 1.875
_ENDPOINT_TOLERANCE = 1e-6
_GRID_EPS = 1e-9


def min_jerk_speed(tau):
    """
    Minimum-jerk speed density 30 tau^2 (1 - tau)^2 on [0, 1].

    Args:
        tau: Scalar or array of normalized times

    Returns:
        Density values with the same shape as ``tau``

    Raises:
        ArgumentException: If any tau lies outside [0, 1]
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0.0) or np.any(tau_arr > 1.0):
        raise ArgumentException("tau must lie in [0, 1]")
    value = 30.0 * tau_arr ** 2 - 60.0 * tau_arr ** 3 + 30.0 * tau_arr ** 4
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True, eq=False)
class ProfileModel(IProfileShape):
    """
    A normalized bell profile.

    ``kind`` is ``analytic-min-jerk`` or ``tabulated``; tabulated models carry
    a unit-area table evaluated by linear interpolation.
    """
    kind: str = "analytic-min-jerk"
    tau: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    source: str = ""

    def density(self, tau) -> np.ndarray:
        if self.kind == "analytic-min-jerk":
            return min_jerk_speed(tau)
        tau_arr = np.asarray(tau, dtype=float)
        if np.any(tau_arr < 0.0) or np.any(tau_arr > 1.0):
            raise ArgumentException("tau must lie in [0, 1]")
        value = np.interp(tau_arr, self.tau, self.values)
        return float(value) if value.ndim == 0 else value

    @property
    def peak_tau(self) -> float:
        if self.kind == "analytic-min-jerk":
            return 0.5
        return float(self.tau[int(np.argmax(self.values))])

    @property
    def peak_value(self) -> float:
        if self.kind == "analytic-min-jerk":
            return MIN_JERK_PEAK
        return float(np.max(self.values))


ANALYTIC_PROFILE = ProfileModel()


@dataclass(frozen=True)
class ProfileSet:
    """Profiles used for reach (linear velocity) and rotate (angular velocity) bells."""
    reach: ProfileModel = ANALYTIC_PROFILE
    rotate: ProfileModel = ANALYTIC_PROFILE

    def for_channel(self, channel: str) -> ProfileModel:
        return self.reach if channel.startswith("v") else self.rotate


def bell_values(times: np.ndarray, peak_value: float, t_peak: float, T: float,
                model: ProfileModel = ANALYTIC_PROFILE) -> np.ndarray:
    """
    Evaluate a peak-anchored bell at arbitrary times.

    The bell reaches ``peak_value`` (signed) at ``t_peak`` and spans ``T``
    seconds; it is zero outside its support.
    """
    times = np.asarray(times, dtype=float)
    tau = model.peak_tau + (times - t_peak) / T
    inside = (tau >= 0.0) & (tau <= 1.0)
    out = np.zeros_like(times)
    if np.any(inside):
        out[inside] = peak_value * model.density(tau[inside]) / model.peak_value
    return out


def render_bell(params: BellParams, model: ProfileModel = ANALYTIC_PROFILE, rate: float = 50.0) -> Series:
    """
    Render the signed speed series of one bell.

    Args:
        params: Bell axis sign, magnitude, start and duration
        model: Profile shape
        rate: Sampling rate in Hz

    Returns:
        Series starting at ``params.t_s`` whose trapezoidal area equals
        ``sign * magnitude``

    Raises:
        ArgumentException: If the bell spans fewer than two samples
    """
    if rate <= 0 or rate * params.T < 2:
        raise ArgumentException(
            f"Bell of duration {params.T} s is degenerate at {rate} Hz (needs at least 2 samples)")
    n = int(np.floor(params.T * rate + _GRID_EPS)) + 1
    tau = np.minimum(np.arange(n) / (rate * params.T), 1.0)
    shape = model.density(tau) * params.magnitude / params.T
    area = trapezoid(shape, dx=1.0 / rate)
    if area > 0:
        shape = shape * (params.magnitude / area)
    values = shape if params.sign > 0 else -shape
    return Series(t0=params.t_s, rate=rate, values=values)


def ramp_values(times: np.ndarray, t_start: float, duration: float, start_level: float,
                end_level: float, model: ProfileModel = ANALYTIC_PROFILE) -> np.ndarray:
    """
    Half-bell transition between two levels.

    Rising transitions follow the first half of the profile (zero to peak),
    falling transitions the second half; values are constant outside
    [t_start, t_start + duration].
    """
    if duration <= 0:
        raise ArgumentException(f"Ramp duration must be positive, got {duration}")
    times = np.asarray(times, dtype=float)
    u = np.clip((times - t_start) / duration, 0.0, 1.0)
    peak_tau = model.peak_tau
    if end_level >= start_level:
        shape = model.density(u * peak_tau) / model.peak_value
        return start_level + (end_level - start_level) * shape
    shape = model.density(peak_tau + u * (1.0 - peak_tau)) / model.peak_value
    return end_level + (start_level - end_level) * shape


def fwhm_fraction(model: ProfileModel = ANALYTIC_PROFILE, resolution: int = 20001) -> float:
    """Width of the profile above half its peak, as a fraction of the bell duration."""
    tau = np.linspace(0.0, 1.0, resolution)
    density = model.density(tau)
    half = model.peak_value / 2.0
    above = np.flatnonzero(density >= half)
    first, last = above[0], above[-1]

    def crossing(i: int, j: int) -> float:
        # linear interpolation between grid points i (below) and j (above)
        if density[j] == density[i]:
            return tau[j]
        return tau[i] + (half - density[i]) / (density[j] - density[i]) * (tau[j] - tau[i])

    left = crossing(first - 1, first) if first > 0 else tau[0]
    right = crossing(last + 1, last) if last < resolution - 1 else tau[-1]
    return float(right - left)


def _first_unimodality_violation(values: np.ndarray, tolerance: float) -> Optional[int]:
    """Index of the first sample that rises again after the profile started falling."""
    falling = False
    for i in range(1, values.size):
        step = values[i] - values[i - 1]
        if step < -tolerance:
            falling = True
        elif step > tolerance and falling:
            return i
    return None


def load_profile(path, smoothing_window: int = 1) -> ProfileModel:
    """
    Load a tabulated profile from a ``tau,value`` CSV.

    Args:
        path: Profile CSV path
        smoothing_window: Optional odd moving-average window applied to the table

    Returns:
        Unit-area tabulated ProfileModel

    Raises:
        SchemaException: If the header lacks ``tau`` or ``value``
        ValidationException: For tables violating the profile invariants,
            naming the first violation
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataRepositoryException(f"Failed to read profile {path}: {str(e)}", {"path": str(path)})

    for column in ("tau", "value"):
        if column not in frame.columns:
            raise SchemaException(f"{path}: missing column '{column}'", {"path": str(path)})

    tau = np.array(frame["tau"], dtype=float)
    values = np.array(frame["value"], dtype=float)
    if tau.size < 3:
        raise ValidationException(f"{path}: profile table needs at least 3 rows")
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(values))):
        raise ValidationException(f"{path}: profile table contains non-finite values")

    steps = np.diff(tau)
    if np.any(steps <= 0):
        row = int(np.argmax(steps <= 0)) + 2
        raise ValidationException(f"{path}: tau not strictly increasing at row {row}", {"row": row})
    if abs(tau[0]) > _GRID_EPS or abs(tau[-1] - 1.0) > _GRID_EPS:
        raise ValidationException(f"{path}: tau must cover [0, 1], got [{tau[0]}, {tau[-1]}]")
    tau[0], tau[-1] = 0.0, 1.0

    negative = np.flatnonzero(values < 0)
    if negative.size:
        row = int(negative[0]) + 1
        raise ValidationException(f"{path}: negative value at row {row}", {"row": row})

    if smoothing_window > 1:
        values = smooth(Series(t0=0.0, rate=1.0, values=values), smoothing_window).values.copy()

    peak = float(values.max())
    if peak <= 0:
        raise ValidationException(f"{path}: profile table is identically zero")
    if values[0] > _ENDPOINT_TOLERANCE * peak or values[-1] > _ENDPOINT_TOLERANCE * peak:
        raise ValidationException(f"{path}: profile must be zero at tau=0 and tau=1")
    values[0] = values[-1] = 0.0

    violation = _first_unimodality_violation(values, 1e-12 * peak)
    if violation is not None:
        raise ValidationException(
            f"{path}: profile is not unimodal (rises again at row {violation + 1}, tau={tau[violation]:g})",
            {"row": violation + 1})

    values = values / trapezoid(values, tau)
    tau.setflags(write=False)
    values.setflags(write=False)
    logger.debug("Loaded tabulated profile %s with %d samples", path, tau.size)
    return ProfileModel(kind="tabulated", tau=tau, values=values, source=str(path))


def load_profile_set(config: ProfileConfig) -> ProfileSet:
    """Build the reach/rotate profiles described by the profile configuration."""
    if config.kind == "analytic":
        return ProfileSet()
    reach = load_profile(config.reach_table, config.table_smoothing_window)
    rotate = reach
    if config.rotate_table:
        rotate = load_profile(config.rotate_table, config.table_smoothing_window)
    return ProfileSet(reach=reach, rotate=rotate)
