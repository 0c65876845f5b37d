"""Reference-channel filtering and estimate post-processing.

Three pieces of signal machinery used throughout the pipeline:

* a zero-phase centered moving average for smoothing the facility speed
  channel before it becomes a training label,
* a fluctuation characterization (mean + symmetric band holding 90% of
  residual samples) for raw-minus-filtered reference residuals,
* the sliding median applied to regressor output streams, in both a
  non-overlapping block form (which lowers the output rate by the window
  factor, e.g. 62.5 Hz -> 10.417 Hz for w=6) and a trailing sliding form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled real series: value[i] is at time t0 + i*dt."""

    t0: float
    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ConfigError("TimeSeries values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise DataError("TimeSeries values must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))


@dataclass(frozen=True)
class FluctuationStats:
    """Mean residual and half-width of the symmetric 90% band about zero."""

    mean: float
    band90: float


class MedianMode(enum.Enum):
    NON_OVERLAPPING = "non_overlapping"
    SLIDING = "sliding"


def lowpass_reference(series: TimeSeries, window_s: float) -> TimeSeries:
    """Zero-phase centered moving average with reflective boundary padding.

    The window length is round(window_s / dt) forced odd (bumped up by one
    when even) so the average stays centered and introduces no phase lag.
    Output grid is identical to the input grid.
    """
    if window_s < 3 * series.dt:
        raise ConfigError(
            f"window_s={window_s} shorter than 3 samples (dt={series.dt})"
        )
    n = int(round(window_s / series.dt))
    if n % 2 == 0:
        n += 1
    if n > len(series):
        raise ConfigError(
            f"moving-average window of {n} samples exceeds series length {len(series)}"
        )
    half = n // 2
    padded = np.pad(series.values, half, mode="reflect")
    kernel = np.full(n, 1.0 / n)
    smooth = np.convolve(padded, kernel, mode="valid")
    return TimeSeries(series.t0, series.dt, smooth)


def fluctuation_band(raw: TimeSeries, filtered: TimeSeries) -> FluctuationStats:
    """Characterize raw-minus-filtered residuals.

    band90 is the smallest b >= 0 such that at least 90% of residuals fall
    inside [-b, +b]; with n samples that is the ceil(0.9 n)-th smallest
    absolute residual.
    """
    if len(raw) != len(filtered) or raw.dt != filtered.dt or raw.t0 != filtered.t0:
        raise DataError("fluctuation_band requires identical sampling grids")
    resid = raw.values - filtered.values
    n = len(resid)
    k = math.ceil(0.9 * n)
    band = 0.0 if k == 0 else float(np.sort(np.abs(resid))[k - 1])
    return FluctuationStats(mean=float(np.mean(resid)), band90=band)


def sliding_median(
    estimates: TimeSeries,
    w: int = 6,
    mode: MedianMode = MedianMode.NON_OVERLAPPING,
) -> TimeSeries:
    """Median filter over w consecutive estimates.

    NON_OVERLAPPING emits one value per disjoint w-block (timestamped at the
    block center, output dt = w * input dt), which avoids correlated outputs
    at the cost of refresh rate. SLIDING emits one value per input sample
    from the trailing w-window, using the available prefix for the first
    w - 1 samples. Even-length medians are the mean of the two central order
    statistics.
    """
    if w < 1:
        raise ConfigError(f"median window must be >= 1, got {w}")
    n = len(estimates)
    if n < w:
        raise DataError(f"series of length {n} shorter than median window {w}")
    v = estimates.values
    if mode is MedianMode.NON_OVERLAPPING:
        nblocks = n // w
        blocks = v[: nblocks * w].reshape(nblocks, w)
        out = np.median(blocks, axis=1)
        return TimeSeries(
            t0=estimates.t0 + 0.5 * (w - 1) * estimates.dt,
            dt=w * estimates.dt,
            values=out,
        )
    out = np.empty(n)
    for i in range(n):
        out[i] = np.median(v[max(0, i - w + 1) : i + 1])
    return TimeSeries(estimates.t0, estimates.dt, out)


def write_timeseries_csv(series: TimeSeries, path) -> None:
    """Write a `t,value` CSV round-trippable at 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,value\n")
        for t, v in zip(series.times, series.values):
            fh.write(f"{t:.17g},{v:.17g}\n")


def read_timeseries_csv(path) -> TimeSeries:
    """Read a `t,value` CSV produced by write_timeseries_csv."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "t,value":
            raise DataError(f"unexpected CSV header {header!r} in {path}")
        times, values = [], []
        for line in fh:
            if not line.strip():
                continue
            t_str, v_str = line.strip().split(",")
            times.append(float(t_str))
            values.append(float(v_str))
    if len(times) < 2:
        raise DataError(f"time-series CSV {path} needs at least two rows")
    t = np.asarray(times)
    dts = np.diff(t)
    dt = float(dts[0])
    if not np.allclose(dts, dt, rtol=1e-9, atol=1e-12):
        raise DataError(f"non-uniform time grid in {path}")
    return TimeSeries(t0=float(t[0]), dt=dt, values=np.asarray(values))
