"""Error metrics, per-run decomposition, and raw-vs-filtered comparison.

Predictions are logged one per non-overlapping evaluation window. Errors
are reported as absolute values (m/s or degrees) and as percentages of the
reference, summarized by mean, 90th percentile (linear-interpolation order
statistic), and max, decomposed per run and split and pooled over all test
windows.

The MEDIAN_FILTERED stage applies the w=6 non-overlapping sliding median
to each predicted component stream of a run before deriving the compared
quantity; the reference at each filtered timestamp is the nearest logged
window label (earlier window on ties). Relative errors at zero reference
(AoA through 0 deg) are excluded from relative aggregates rather than
crashing.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .filters import MedianMode, TimeSeries, sliding_median
from .flowstate import EstimationTarget
from .network import ModelState, NormStats, forward_batch
from .synth import RunRecord
from .windows import Partition, extract_windows, filtered_reference_speed

MEDIAN_WINDOW = 6
SPLITS = ("train", "validation", "test")


class Quantity(enum.Enum):
    ZERO_AOA_SPEED = "zero_aoa_speed"
    AOA = "aoa"
    SPEED_MAGNITUDE = "speed_magnitude"


class Stage(enum.Enum):
    RAW = "raw"
    MEDIAN_FILTERED = "median_filtered"


@dataclass(frozen=True)
class PredictionSeries:
    """Per-(run, split) predictions at window-center times."""

    run_label: str
    split: str
    times: np.ndarray = field(repr=False)  # window centers, strictly increasing
    pred: np.ndarray = field(repr=False)  # (n, k)
    ref_speed: np.ndarray = field(repr=False)  # (n,) filtered reference, m/s
    ref_aoa: np.ndarray = field(repr=False)  # (n,) degrees

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise DataError(
                f"window times must be strictly increasing ({self.run_label}/{self.split})"
            )
        if len(self.times) != len(self.pred):
            raise DataError("times/pred length mismatch")


@dataclass(frozen=True)
class PredictionLog:
    target: EstimationTarget
    series: tuple[PredictionSeries, ...]

    def __post_init__(self):
        k = self.target.k
        for s in self.series:
            if s.pred.shape[1] != k:
                raise ConfigError(
                    f"series {s.run_label}/{s.split} has k={s.pred.shape[1]}, "
                    f"log target expects k={k}"
                )


@dataclass(frozen=True)
class ErrorSummary:
    quantity: Quantity
    stage: Stage
    run_label: str  # "ALL" for the pooled row
    split: str
    count: int
    mean_abs: float
    p90_abs: float
    max_abs: float
    mean_rel: float  # percent; NaN when every sample was excluded
    p90_rel: float
    max_rel: float


def abs_error(ref: float, est: float) -> float:
    return abs(ref - est)


def rel_error(ref: float, est: float) -> float:
    """Percent error relative to |ref|; NaN marks an excluded zero-reference
    sample (it never raises)."""
    if ref == 0:
        return math.nan
    return 100.0 * abs(ref - est) / abs(ref)


def percentile(values, p: float = 90.0) -> float:
    """Linear-interpolation order statistic at rank p/100*(n-1)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise DataError("percentile of an empty collection")
    return float(np.percentile(arr, p, method="linear"))


def _derive(quantity: Quantity, k: int, pred: np.ndarray) -> np.ndarray:
    """Estimated quantity stream from raw prediction vectors."""
    if quantity is Quantity.ZERO_AOA_SPEED:
        if k != 1:
            raise ConfigError("zero-AoA speed needs k=1 predictions")
        return pred[:, 0]
    if k != 2:
        raise ConfigError(f"{quantity.value} needs k=2 predictions")
    if quantity is Quantity.AOA:
        # arctan2 keeps badly-scaled estimates finite instead of raising.
        return np.degrees(np.arctan2(pred[:, 1], pred[:, 0]))
    return np.hypot(pred[:, 0], pred[:, 1])


def _reference(quantity: Quantity, series: PredictionSeries) -> np.ndarray:
    return series.ref_aoa if quantity is Quantity.AOA else series.ref_speed


def _median_stage(series: PredictionSeries, quantity: Quantity, k: int):
    """Filtered estimate/reference pairs for one series."""
    if len(series.times) < MEDIAN_WINDOW:
        return None
    dt = float(np.median(np.diff(series.times)))
    filtered_components = []
    for j in range(k):
        comp = TimeSeries(t0=float(series.times[0]), dt=dt, values=series.pred[:, j])
        filtered_components.append(
            sliding_median(comp, w=MEDIAN_WINDOW, mode=MedianMode.NON_OVERLAPPING)
        )
    t_f = filtered_components[0].times
    pred_f = np.stack([f.values for f in filtered_components], axis=1)
    # Reference resampled at the filtered timestamps: nearest logged window,
    # earlier one on ties.
    ref = _reference(quantity, series)
    pos = np.searchsorted(series.times, t_f)
    pos = np.clip(pos, 1, len(series.times) - 1)
    left_closer = (t_f - series.times[pos - 1]) <= (series.times[pos] - t_f)
    nearest = np.where(left_closer, pos - 1, pos)
    return _derive(quantity, k, pred_f), ref[nearest]


def _summary_row(
    quantity: Quantity,
    stage: Stage,
    run_label: str,
    split: str,
    est: np.ndarray,
    ref: np.ndarray,
) -> ErrorSummary:
    err = np.abs(ref - est)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ref != 0, 100.0 * err / np.abs(ref), np.nan)
    rel_ok = rel[np.isfinite(rel)]
    if rel_ok.size:
        mean_rel, p90_rel, max_rel = (
            float(np.mean(rel_ok)),
            percentile(rel_ok, 90),
            float(np.max(rel_ok)),
        )
    else:
        mean_rel = p90_rel = max_rel = math.nan
    return ErrorSummary(
        quantity=quantity,
        stage=stage,
        run_label=run_label,
        split=split,
        count=len(err),
        mean_abs=float(np.mean(err)),
        p90_abs=percentile(err, 90),
        max_abs=float(np.max(err)),
        mean_rel=mean_rel,
        p90_rel=p90_rel,
        max_rel=max_rel,
    )


def summarize(log: PredictionLog, stage: Stage, quantity: Quantity) -> list[ErrorSummary]:
    """Per-(run, split) summaries plus a pooled row over all test windows."""
    k = log.target.k
    rows = []
    pooled_est, pooled_ref = [], []
    for series in log.series:
        if stage is Stage.RAW:
            pair = (_derive(quantity, k, series.pred), _reference(quantity, series))
        else:
            pair = _median_stage(series, quantity, k)
            if pair is None:
                continue
        est, ref = pair
        rows.append(
            _summary_row(quantity, stage, series.run_label, series.split, est, ref)
        )
        if series.split == "test":
            pooled_est.append(est)
            pooled_ref.append(ref)
    if pooled_est:
        rows.append(
            _summary_row(
                quantity,
                stage,
                "ALL",
                "test",
                np.concatenate(pooled_est),
                np.concatenate(pooled_ref),
            )
        )
    return rows


def build_prediction_log(
    state: ModelState,
    stats: NormStats,
    records: list[RunRecord],
    partitions: dict[str, Partition],
    target: EstimationTarget,
    window_s: float,
    splits=SPLITS,
) -> PredictionLog:
    """Evaluate non-overlapping windows of every record/split."""
    series = []
    for record in records:
        partition = partitions[record.spec.label]
        filtered = filtered_reference_speed(record)
        for split in splits:
            wins = extract_windows(
                record,
                partition.ranges_for(split),
                stride_s=window_s,
                window_s=window_s,
                target=target,
                filtered_speed=filtered,
            )
            if not wins:
                continue
            batch = np.stack([w.sensors for w in wins])
            pred = forward_batch(state, stats, batch)
            times = np.array([0.5 * (w.span.start + w.span.end) for w in wins])
            if target is EstimationTarget.SCALAR_SPEED:
                ref_speed = np.array([w.label[0] for w in wins])
                ref_aoa = np.zeros(len(wins))
            else:
                labels = np.stack([w.label for w in wins])
                ref_speed = np.hypot(labels[:, 0], labels[:, 1])
                ref_aoa = np.degrees(np.arctan2(labels[:, 1], labels[:, 0]))
            series.append(
                PredictionSeries(
                    run_label=record.spec.label,
                    split=split,
                    times=times,
                    pred=pred,
                    ref_speed=ref_speed,
                    ref_aoa=ref_aoa,
                )
            )
    return PredictionLog(target=target, series=tuple(series))


@dataclass(frozen=True)
class SweepRow:
    fraction: float
    run_label: str
    mean_err: float  # across retrains
    sigma: float  # ddof=1 across retrains
    constant_condition: bool


def holdout_sweep_report(
    per_fraction: dict[float, list[dict[str, float]]],
    constant_runs: set[str],
    expected_fractions=(0.10, 0.20, 0.30, 0.40, 0.50),
) -> list[SweepRow]:
    """Across-retrain mean and sigma of per-run withheld-block errors.

    per_fraction maps test fraction -> one {run_label: mean_abs_error} dict
    per retrain. Rows are grouped constant-condition first, then varying.
    """
    for f in expected_fractions:
        if f not in per_fraction:
            raise DataError(f"missing sweep fraction {f}")
        if len(per_fraction[f]) < 2:
            raise ConfigError(f"fraction {f} needs >= 2 retrains")
    rows = []
    run_labels = sorted(per_fraction[expected_fractions[0]][0])
    for run in run_labels:
        for f in expected_fractions:
            errs = np.array([retrain[run] for retrain in per_fraction[f]])
            rows.append(
                SweepRow(
                    fraction=f,
                    run_label=run,
                    mean_err=float(errs.mean()),
                    sigma=float(errs.std(ddof=1)),
                    constant_condition=run in constant_runs,
                )
            )
    rows.sort(key=lambda r: (not r.constant_condition, r.run_label, r.fraction))
    return rows
