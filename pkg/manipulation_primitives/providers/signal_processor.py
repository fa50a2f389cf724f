"""
Signal processing for multi-modal manipulation recordings.
Resamples trials onto a uniform grid, merges per-modality streams, forms the
composite force/bend signals and smooths them.
"""

import logging
from typing import Optional

import numpy as np
import pandas as pd

from ..config import VELOCITY_CHANNELS, ANGULAR_CHANNELS, PRESSURE_CHANNELS, BEND_CHANNELS
from ..core.entities import Trial, Series, ChannelGroup
from ..core.exceptions import ArgumentException, SchemaException, DataException

logger = logging.getLogger(__name__)

_GRID_EPS = 1e-9


def infer_rate(t: np.ndarray, default: float = 50.0) -> float:
    """Infer the sampling rate from timestamps; single-frame trials get ``default``."""
    t = np.asarray(t, dtype=float)
    if t.size < 2 or t[-1] <= t[0]:
        return float(default)
    return float((t.size - 1) / (t[-1] - t[0]))


def uniform_grid(t_first: float, t_last: float, rate: float) -> np.ndarray:
    """
    Uniform grid from ``t_first`` in steps of 1/rate, not past ``t_last``.

    A trailing span shorter than one step is dropped, so the grid ends on
    ``t_last`` only when the span is a whole number of steps.
    """
    n = int(np.floor((t_last - t_first) * rate + _GRID_EPS)) + 1
    grid = t_first + np.arange(n) / rate
    # land exactly on t_last when the span is a whole number of steps
    if n > 1 and abs(grid[-1] - t_last) < _GRID_EPS:
        grid[-1] = t_last
    return grid


def _interp_block(grid: np.ndarray, t: np.ndarray, block: np.ndarray) -> np.ndarray:
    return np.column_stack([np.interp(grid, t, block[:, j]) for j in range(block.shape[1])])


def resample(trial: Trial, rate: float) -> Trial:
    """
    Linearly interpolate every channel onto a uniform grid at ``rate``.

    Args:
        trial: Source trial (any spacing)
        rate: Target rate in Hz

    Returns:
        New trial spanning [t_first, t_last] at the requested rate

    Raises:
        ArgumentException: If rate is not positive
    """
    if not rate > 0:
        raise ArgumentException(f"Resample rate must be positive, got {rate}")

    grid = uniform_grid(float(trial.t[0]), float(trial.t[-1]), rate)
    return Trial(
        id=trial.id,
        subject=trial.subject,
        action_label=trial.action_label,
        t=grid,
        v=_interp_block(grid, trial.t, trial.v),
        w=_interp_block(grid, trial.t, trial.w),
        F=_interp_block(grid, trial.t, trial.F),
        b=_interp_block(grid, trial.t, trial.b),
        rate=float(rate),
    )


def composite_norm(trial: Trial, group: ChannelGroup) -> Series:
    """Euclidean norm per frame over the pressure (18) or bend (8) channel group."""
    if not isinstance(group, ChannelGroup):
        group = ChannelGroup(group)
    values = np.linalg.norm(trial.group(group), axis=1)
    return Series(t0=float(trial.t[0]), rate=trial.rate, values=values)


def smooth(series: Series, window: int) -> Series:
    """
    Centered moving average with shrunken symmetric windows at the edges.

    Args:
        series: Input series
        window: Odd window length in samples, 1 <= window <= len(series)

    Returns:
        Series of the same length and rate

    Raises:
        ArgumentException: For even, non-positive or oversize windows
    """
    n = len(series)
    if window < 1 or window % 2 == 0:
        raise ArgumentException(f"Smoothing window must be a positive odd number, got {window}")
    if window > n:
        raise ArgumentException(f"Smoothing window {window} exceeds series length {n}")
    if window == 1:
        return series

    x = series.values
    k = window // 2
    idx = np.arange(n)
    half = np.minimum(k, np.minimum(idx, n - 1 - idx))
    cumulative = np.concatenate(([0.0], np.cumsum(x)))
    out = (cumulative[idx + half + 1] - cumulative[idx - half]) / (2 * half + 1)
    # guard rounding from the running sum
    out = np.clip(out, x.min(), x.max())
    return Series(t0=series.t0, rate=series.rate, values=out)


def scale_group(trial: Trial, group: ChannelGroup, factor: float) -> Trial:
    """Multiply every channel of a group by a non-negative factor."""
    if factor < 0:
        raise ArgumentException(f"Channel scale factor must be non-negative, got {factor}")
    if group is ChannelGroup.PRESSURE:
        return trial.with_channels(F=trial.F * factor)
    return trial.with_channels(b=trial.b * factor)


def _require_columns(frame: pd.DataFrame, columns, stream: str) -> None:
    for column in ("t",) + tuple(columns):
        if column not in frame.columns:
            raise SchemaException(f"{stream} stream is missing column '{column}'", {"stream": stream})


def merge_modalities(motion: pd.DataFrame, pressure: pd.DataFrame, bend: pd.DataFrame,
                     trial_id: str = "", subject: str = "", action: Optional[str] = None,
                     default_rate: float = 50.0) -> Trial:
    """
    Merge independently time-stamped streams onto the pressure-stream grid.

    Motion (``t,vx..wz``) and bend (``t,b1..b8``) streams are linearly
    interpolated at the pressure timestamps; values outside a stream's time
    span take its first/last sample.
    """
    _require_columns(motion, VELOCITY_CHANNELS + ANGULAR_CHANNELS, "motion")
    _require_columns(pressure, PRESSURE_CHANNELS, "pressure")
    _require_columns(bend, BEND_CHANNELS, "bend")

    for name, stream in (("motion", motion), ("pressure", pressure), ("bend", bend)):
        if stream.empty:
            raise DataException(f"{name} stream has no rows")
        ts = stream["t"].to_numpy(dtype=float)
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise DataException(f"{name} stream timestamps must be strictly increasing")

    grid = pressure["t"].to_numpy(dtype=float)

    def on_grid(stream: pd.DataFrame, columns) -> np.ndarray:
        ts = stream["t"].to_numpy(dtype=float)
        return _interp_block(grid, ts, stream[list(columns)].to_numpy(dtype=float))

    motion_block = on_grid(motion, VELOCITY_CHANNELS + ANGULAR_CHANNELS)
    logger.debug("Merged modalities onto %d pressure timestamps", grid.size)

    return Trial(
        id=trial_id,
        subject=subject,
        action_label=action,
        t=grid,
        v=motion_block[:, :3],
        w=motion_block[:, 3:],
        F=pressure[list(PRESSURE_CHANNELS)].to_numpy(dtype=float),
        b=np.clip(on_grid(bend, BEND_CHANNELS), 0.0, None),
        rate=infer_rate(grid, default_rate),
    )
