"""Windowing, label assignment, and center-block holdout partitioning.

A run is split into a contiguous test block at its temporal center,
validation slices at both extremes, and the two remaining interior train
ranges. Windows are cut independently inside each range and are emitted
only when fully contained, so no window ever straddles a partition
boundary (the leakage guard). All boundaries snap to whole sensor-sample
ticks and every computation below works in integer sample indices to keep
splits bit-reproducible and auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .filters import TimeSeries, lowpass_reference
from .flowstate import EstimationTarget, FlowState, body_components
from .synth import RunRecord

DEFAULT_WINDOW_S = 0.016
DEFAULT_LOWPASS_S = 0.5


@dataclass(frozen=True)
class TimeRange:
    """Half-open interval [start, end) in seconds."""

    start: float
    end: float

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ConfigError(f"invalid time range [{self.start}, {self.end})")

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Partition:
    """Disjoint train/validation ranges around a centered test block."""

    train: tuple[TimeRange, ...]
    validation: tuple[TimeRange, ...]
    test: TimeRange

    def ranges_for(self, split: str) -> tuple[TimeRange, ...]:
        if split == "train":
            return self.train
        if split == "validation":
            return self.validation
        if split == "test":
            return (self.test,)
        raise ConfigError(f"unknown split {split!r}")


@dataclass(frozen=True)
class SplitSpec:
    """Holdout fractions and window strides for one partitioning scheme."""

    test_frac: float = 0.10
    val_frac: float = 0.10
    train_stride_s: float = 0.0032
    eval_stride_s: float | None = None  # defaults to the window length

    def __post_init__(self):
        if self.test_frac + self.val_frac >= 1:
            raise ConfigError("test_frac + val_frac must be < 1")
        if self.train_stride_s <= 0:
            raise ConfigError("train_stride_s must be > 0")
        if self.eval_stride_s is not None and self.eval_stride_s <= 0:
            raise ConfigError("eval_stride_s must be > 0")

    def eval_stride(self, window_s: float) -> float:
        return self.eval_stride_s if self.eval_stride_s is not None else window_s


@dataclass(frozen=True)
class Window:
    """One sensor block with its averaged flow-state label."""

    run_label: str
    span: TimeRange
    sensors: np.ndarray = field(repr=False)  # (n_sensors, n_t), volts
    label: np.ndarray = field(repr=False)  # shape (k,)


def _snap(t: float, rate: float) -> int:
    return int(round(t * rate))


def center_block_partition(
    duration_s: float, spec: SplitSpec, sensor_rate_hz: float
) -> Partition:
    """Centered test block, validation halves at both run extremes.

    Boundaries are snapped to whole sensor-sample ticks before the ranges
    are constructed.
    """
    if spec.test_frac <= 0:
        raise ConfigError("test_frac must be > 0 (empty test block)")
    d = duration_s
    rate = sensor_rate_hz
    val_lo_end = _snap(d * spec.val_frac / 2, rate)
    test_start = _snap(d * (1 - spec.test_frac) / 2, rate)
    test_end = _snap(d * (1 + spec.test_frac) / 2, rate)
    val_hi_start = _snap(d * (1 - spec.val_frac / 2), rate)
    end = _snap(d, rate)
    if not val_lo_end <= test_start < test_end <= val_hi_start:
        raise ConfigError(
            f"fractions test={spec.test_frac}, val={spec.val_frac} leave no "
            "train time"
        )

    def rng(i0: int, i1: int) -> TimeRange:
        return TimeRange(i0 / rate, i1 / rate)

    validation = []
    if val_lo_end > 0:
        validation.append(rng(0, val_lo_end))
    if end > val_hi_start:
        validation.append(rng(val_hi_start, end))
    train = []
    if test_start > val_lo_end:
        train.append(rng(val_lo_end, test_start))
    if val_hi_start > test_end:
        train.append(rng(test_end, val_hi_start))
    if not train:
        raise ConfigError("partition leaves no train time")
    return Partition(
        train=tuple(train), validation=tuple(validation), test=rng(test_start, test_end)
    )


def window_starts(
    r: TimeRange, stride_s: float, window_s: float, rate: float
) -> np.ndarray:
    """Start indices (sensor samples) of windows fully contained in a range."""
    i0 = _snap(r.start, rate)
    i1 = _snap(r.end, rate)
    w = _snap(window_s, rate)
    s = _snap(stride_s, rate)
    if w <= 0 or s <= 0:
        raise ConfigError(f"window ({window_s}s) and stride ({stride_s}s) must be > 0")
    if i1 - i0 < w:
        return np.empty(0, dtype=np.int64)
    count = (i1 - i0 - w) // s + 1
    return i0 + s * np.arange(count, dtype=np.int64)


def window_label(
    record: RunRecord,
    span: TimeRange,
    target: EstimationTarget,
    filtered_speed: TimeSeries | None = None,
) -> np.ndarray:
    """Average the reference channels over a span into a training label.

    Speed labels come from the low-pass filtered reference channel; AoA is
    used as measured. For BODY_COMPONENTS the averaged (speed, aoa) pair is
    converted to (vx, vy).
    """
    if filtered_speed is None:
        filtered_speed = filtered_reference_speed(record)
    # Label sample k sits at sensor index k * samples_per_label; keep the
    # containment test in exact integer arithmetic.
    rate = record.array.sensor_rate_hz
    spl = record.array.samples_per_label
    i0 = _snap(span.start, rate)
    i1 = _snap(span.end, rate)
    k0 = -(-i0 // spl)
    k1 = -(-i1 // spl) - 1
    if k1 < k0 or k0 >= record.label_len:
        raise DataError(
            f"no label samples inside window [{span.start}, {span.end}) of run "
            f"{record.spec.label}"
        )
    k1 = min(k1, record.label_len - 1)
    mean_speed = float(np.mean(filtered_speed.values[k0 : k1 + 1]))
    if target is EstimationTarget.SCALAR_SPEED:
        return np.array([mean_speed])
    mean_aoa = float(np.mean(record.ref_aoa[k0 : k1 + 1]))
    v = body_components(FlowState(speed=mean_speed, aoa=mean_aoa))
    return np.array([v.vx, v.vy])


def filtered_reference_speed(
    record: RunRecord, lowpass_window_s: float = DEFAULT_LOWPASS_S
) -> TimeSeries:
    """Low-pass filtered reference speed channel on the label grid."""
    raw = TimeSeries(t0=0.0, dt=record.label_dt, values=record.ref_speed_raw)
    return lowpass_reference(raw, lowpass_window_s)


def extract_windows(
    record: RunRecord,
    ranges,
    stride_s: float,
    window_s: float = DEFAULT_WINDOW_S,
    target: EstimationTarget = EstimationTarget.SCALAR_SPEED,
    filtered_speed: TimeSeries | None = None,
) -> list[Window]:
    """Cut labeled windows from each range independently.

    Within a range, windows start at the range start and advance by the
    stride; a window is emitted only if fully contained in the range.
    Sensor blocks are views into the record's sensor matrix.
    """
    if filtered_speed is None:
        filtered_speed = filtered_reference_speed(record)
    rate = record.array.sensor_rate_hz
    w = _snap(window_s, rate)
    out: list[Window] = []
    for r in ranges:
        for i0 in window_starts(r, stride_s, window_s, rate):
            span = TimeRange(i0 / rate, (i0 + w) / rate)
            label = window_label(record, span, target, filtered_speed)
            out.append(
                Window(
                    run_label=record.spec.label,
                    span=span,
                    sensors=record.sensors[:, i0 : i0 + w],
                    label=label,
                )
            )
    return out


def holdout_sweep_specs(base: SplitSpec) -> list[SplitSpec]:
    """The five sweep configurations: test fractions 10% through 50%."""
    return [replace(base, test_frac=f) for f in (0.10, 0.20, 0.30, 0.40, 0.50)]


def windows_within(windows, ranges) -> bool:
    """True when every window span lies inside one of the given ranges."""
    eps = 1e-12
    return all(
        any(r.start - eps <= w.span.start and w.span.end <= r.end + eps for r in ranges)
        for w in windows
    )


# ---------------------------------------------------------------------------
# Partition manifest: an auditable text record of one run's split, with all
# boundaries in integer sensor-sample indices.
# ---------------------------------------------------------------------------


def write_partition_manifest(
    path,
    run_label: str,
    partition: Partition,
    spec: SplitSpec,
    sensor_rate_hz: float,
) -> None:
    def fmt(ranges) -> str:
        return ", ".join(
            f"{_snap(r.start, sensor_rate_hz)}:{_snap(r.end, sensor_rate_hz)}"
            for r in ranges
        )

    eval_stride = "" if spec.eval_stride_s is None else f"{spec.eval_stride_s:.17g}"
    lines = [
        f"run = {run_label}",
        f"sensor_rate_hz = {sensor_rate_hz:.17g}",
        f"test_frac = {spec.test_frac:.17g}",
        f"val_frac = {spec.val_frac:.17g}",
        f"train_stride_s = {spec.train_stride_s:.17g}",
        f"eval_stride_s = {eval_stride}",
        f"train = {fmt(partition.train)}",
        f"validation = {fmt(partition.validation)}",
        f"test = {fmt((partition.test,))}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_partition_manifest(path) -> tuple[str, Partition, SplitSpec, float]:
    kv = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    try:
        rate = float(kv["sensor_rate_hz"])

        def parse(text: str) -> tuple[TimeRange, ...]:
            if not text:
                return ()
            out = []
            for pair in text.split(","):
                a, b = pair.strip().split(":")
                out.append(TimeRange(int(a) / rate, int(b) / rate))
            return tuple(out)

        partition = Partition(
            train=parse(kv["train"]),
            validation=parse(kv["validation"]),
            test=parse(kv["test"])[0],
        )
        spec = SplitSpec(
            test_frac=float(kv["test_frac"]),
            val_frac=float(kv["val_frac"]),
            train_stride_s=float(kv["train_stride_s"]),
            eval_stride_s=float(kv["eval_stride_s"]) if kv["eval_stride_s"] else None,
        )
        return kv["run"], partition, spec, rate
    except (KeyError, ValueError, IndexError) as exc:
        raise DataError(f"malformed partition manifest {path}: {exc}") from exc
