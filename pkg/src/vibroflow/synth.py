"""Synthetic multi-sensor vibration campaign generation.

Real facility records are not distributable, so this module manufactures a
16-run surrogate campaign whose sensor-array statistics encode the flow
state through four independently testable cues:

* total signal power grows as (speed / nominal)^speed_exponent,
* the dominant excitation band center scales linearly with speed,
* a convecting component is shared along the array with per-sensor delay
  sensor_pitch / (convection_fraction * speed), so the spatiotemporal slope
  encodes speed,
* per-sensor amplitude is tilted linearly along the array in proportion to
  the angle of attack (positive AoA boosts the base end of the array).

Reference-speed labels carry calibrated zero-mean fluctuations: Gaussian
for M8-class runs (90% of samples inside +/- label_noise_band90) and
piecewise-constant 0.25 s segments at reduced amplitude for M5-class runs.

All randomness flows from a single per-run seed through PCG64 generators
spawned via numpy SeedSequence (one stream for the shared convecting
component, one for label noise, one per sensor), so records are bit
reproducible; the generator family is recorded in the run-file header.
"""

from __future__ import annotations

import enum
import json
import math
import os
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, DataError

CONE_LENGTH_M = 0.517
GENERATOR_FAMILY = "pcg64-seedseq"
GENERATOR_FAMILY_ID = 1

_RUN_MAGIC = b"VSR1"
_RUN_VERSION = 1
_HEADER_BYTES = 56
_Z95 = 1.6448536269514722  # two-sided 90% quantile of the unit normal


class MachClass(enum.Enum):
    M5 = "M5"
    M8 = "M8"

    @property
    def nominal_speed(self) -> float:
        """Nominal freestream speed in m/s for the Mach class."""
        return 1081.0 if self is MachClass.M8 else 800.0


class ReynoldsLevel(enum.Enum):
    LOW = "Low"
    MID = "Mid"
    HIGH = "High"
    HIGH_TO_MID = "HighToMid"
    MID_TO_LOW = "MidToLow"


Breakpoints = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class RunSpec:
    """One wind-tunnel run: label, condition profiles, and its RNG seed.

    Profiles are piecewise-linear breakpoint lists (t_seconds, value),
    evaluated with end clamping; a single breakpoint means constant.
    """

    label: str
    mach_class: MachClass
    reynolds_level: ReynoldsLevel
    duration_s: float
    speed_bp: Breakpoints
    aoa_bp: Breakpoints
    seed: int

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError(f"duration must be > 0, got {self.duration_s}")
        if not self.speed_bp or not self.aoa_bp:
            raise ConfigError("speed/aoa profiles need at least one breakpoint")
        if min(v for _, v in self.speed_bp) <= 0:
            raise ConfigError(f"run {self.label}: speed profile must stay > 0")
        if max(abs(a) for _, a in self.aoa_bp) > 9.0 + 1e-9:
            raise ConfigError(f"run {self.label}: |aoa| must stay <= 9 deg")

    def speed_at(self, t) -> np.ndarray:
        return _piecewise(t, self.speed_bp)

    def aoa_at(self, t) -> np.ndarray:
        return _piecewise(t, self.aoa_bp)

    @property
    def constant_speed(self) -> bool:
        vals = {v for _, v in self.speed_bp}
        return len(vals) == 1

    @property
    def constant_aoa(self) -> bool:
        vals = {a for _, a in self.aoa_bp}
        return len(vals) == 1

    @property
    def constant_condition(self) -> bool:
        return self.constant_speed and self.constant_aoa


@dataclass(frozen=True)
class ArraySpec:
    """Sensor-array geometry and acquisition rates."""

    n_sensors: int = 48
    sensor_pitch_m: float = CONE_LENGTH_M / 48
    sensor_rate_hz: float = 250_000.0
    label_rate_hz: float = 100.0

    def __post_init__(self):
        if self.n_sensors < 2:
            raise ConfigError(f"need >= 2 sensors, got {self.n_sensors}")
        ratio = self.sensor_rate_hz / self.label_rate_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(
                "sensor_rate_hz must be an integer multiple of label_rate_hz "
                f"({self.sensor_rate_hz} vs {self.label_rate_hz})"
            )

    @property
    def samples_per_label(self) -> int:
        return int(round(self.sensor_rate_hz / self.label_rate_hz))


@dataclass(frozen=True)
class ExcitationParams:
    """Surrogate coupling parameters between flow state and sensor signals."""

    base_gain_v: float = 1.0
    speed_exponent: float = 4.0
    convection_fraction: float = 0.7
    aoa_gradient_gain: float = 0.05  # per degree
    band_center_gain_hz: float = 40.0  # Hz per (m/s)
    label_noise_band90: float = 1.3  # m/s
    sensor_noise_rms: float = 0.1  # volts
    band_width_frac: float = 0.35  # excitation band half-width / band center
    shared_fraction: float = 0.5  # power fraction of the convecting component
    m5_noise_scale: float = 0.5  # M5 label-noise amplitude relative to M8

    def __post_init__(self):
        for name in (
            "base_gain_v",
            "speed_exponent",
            "aoa_gradient_gain",
            "band_center_gain_hz",
            "label_noise_band90",
            "sensor_noise_rms",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 < self.convection_fraction <= 1:
            raise ConfigError("convection_fraction must lie in (0, 1]")
        if not 0 <= self.shared_fraction <= 1:
            raise ConfigError("shared_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class RunRecord:
    """Synthesized sensor matrix plus reference channels for one run."""

    spec: RunSpec
    array: ArraySpec
    sensors: np.ndarray = field(repr=False)  # (n_sensors, n_samples) float32
    ref_speed_raw: np.ndarray = field(repr=False)  # (label_len,) float64
    ref_aoa: np.ndarray = field(repr=False)
    true_speed: np.ndarray = field(repr=False)

    @property
    def n_samples(self) -> int:
        return self.sensors.shape[1]

    @property
    def label_len(self) -> int:
        return len(self.ref_speed_raw)

    @property
    def label_dt(self) -> float:
        return 1.0 / self.array.label_rate_hz


def records_equal(a: RunRecord, b: RunRecord) -> bool:
    return (
        a.spec == b.spec
        and a.array == b.array
        and np.array_equal(a.sensors, b.sensors)
        and np.array_equal(a.ref_speed_raw, b.ref_speed_raw)
        and np.array_equal(a.ref_aoa, b.ref_aoa)
        and np.array_equal(a.true_speed, b.true_speed)
    )


def _piecewise(t, breakpoints: Breakpoints) -> np.ndarray:
    pts = np.asarray(breakpoints, dtype=np.float64)
    return np.interp(np.asarray(t, dtype=np.float64), pts[:, 0], pts[:, 1])


def _run_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((base_seed, index)).generate_state(1)[0])


def _hold(value: float) -> Breakpoints:
    return ((0.0, value),)


def _ramp(duration: float, v0: float, v1: float) -> Breakpoints:
    return ((0.0, v0), (duration, v1))


# Constant-level speed multipliers by Reynolds descriptor; ramped runs drop
# 3% of nominal over the run.
_LEVEL_SCALE = {
    ReynoldsLevel.LOW: 0.995,
    ReynoldsLevel.MID: 1.0,
    ReynoldsLevel.HIGH: 1.005,
}

AOA_SWEEP_PLATEAUS = (0.0, 8.5, -8.5, 6.0, -6.0, 3.0, -3.0)
AOA_RAMP_S = 0.25


def _speed_profile(mach: MachClass, level: ReynoldsLevel, duration: float) -> Breakpoints:
    v0 = mach.nominal_speed
    if level is ReynoldsLevel.HIGH_TO_MID:
        return _ramp(duration, v0 * _LEVEL_SCALE[ReynoldsLevel.HIGH], v0 * (_LEVEL_SCALE[ReynoldsLevel.HIGH] - 0.03))
    if level is ReynoldsLevel.MID_TO_LOW:
        return _ramp(duration, v0, v0 * 0.97)
    return _hold(v0 * _LEVEL_SCALE[level])


def aoa_sweep_profile(duration: float) -> Breakpoints:
    """Equal dwells at the seven sweep plateaus joined by 0.25 s ramps."""
    n = len(AOA_SWEEP_PLATEAUS)
    dwell = (duration - (n - 1) * AOA_RAMP_S) / n
    if dwell <= 0:
        raise ConfigError(f"duration {duration}s too short for the AoA sweep")
    pts: list[tuple[float, float]] = []
    t = 0.0
    for i, a in enumerate(AOA_SWEEP_PLATEAUS):
        pts.append((t, a))
        t += dwell
        pts.append((t, a))
        if i < n - 1:
            t += AOA_RAMP_S
    return tuple(pts)


_CAMPAIGN_TABLE = (
    # (label, mach, reynolds, sweep_aoa, hold_aoa_deg)
    ("Z-1", MachClass.M8, ReynoldsLevel.LOW, False, 0.0),
    ("Z-2", MachClass.M8, ReynoldsLevel.HIGH, False, 0.0),
    ("Z-3", MachClass.M8, ReynoldsLevel.LOW, False, 0.0),
    ("Z-4", MachClass.M8, ReynoldsLevel.HIGH_TO_MID, False, 0.0),
    ("Z-5", MachClass.M8, ReynoldsLevel.MID_TO_LOW, False, 0.0),
    ("Z-6", MachClass.M5, ReynoldsLevel.LOW, False, 0.0),
    ("Z-7", MachClass.M5, ReynoldsLevel.MID_TO_LOW, False, 0.0),
    ("NZ-1", MachClass.M8, ReynoldsLevel.MID, True, None),
    ("NZ-2", MachClass.M8, ReynoldsLevel.MID, True, None),
    ("NZ-3", MachClass.M8, ReynoldsLevel.HIGH, True, None),
    ("NZ-4", MachClass.M8, ReynoldsLevel.LOW, False, 9.0),
    ("NZ-5", MachClass.M8, ReynoldsLevel.HIGH, False, 9.0),
    ("NZ-6", MachClass.M5, ReynoldsLevel.LOW, True, None),
    ("NZ-7", MachClass.M5, ReynoldsLevel.MID, True, None),
    ("NZ-8", MachClass.M5, ReynoldsLevel.HIGH, True, None),
    ("NZ-9", MachClass.M5, ReynoldsLevel.HIGH, False, 9.0),
)


def default_campaign(duration_s: float = 16.0, base_seed: int = 0) -> list[RunSpec]:
    """The 16-run campaign: 7 zero-AoA runs and 9 nonzero-AoA runs.

    Z-runs hold 0 deg; nonzero runs either sweep the seven AoA plateaus or
    hold 9 deg. Per-run seeds are derived from base_seed and the run index.
    """
    specs = []
    for i, (label, mach, level, sweep, hold_aoa) in enumerate(_CAMPAIGN_TABLE):
        aoa_bp = aoa_sweep_profile(duration_s) if sweep else _hold(hold_aoa)
        specs.append(
            RunSpec(
                label=label,
                mach_class=mach,
                reynolds_level=level,
                duration_s=duration_s,
                speed_bp=_speed_profile(mach, level, duration_s),
                aoa_bp=aoa_bp,
                seed=_run_seed(base_seed, i),
            )
        )
    return specs


def _band_voice(rng, f_center_hz: np.ndarray, halfwidth_hz: float, fs: float) -> np.ndarray:
    """Unit-RMS stochastic narrowband voice with instantaneous center f_center.

    Built as e1*cos(phi) + e2*sin(phi) where phi integrates the center
    frequency and e1/e2 are independent AR(1)-lowpassed Gaussian envelopes
    whose cutoff sets the band half-width.
    """
    n = len(f_center_hz)
    a = math.exp(-2.0 * math.pi * halfwidth_hz / fs)
    gain = math.sqrt(1.0 - a * a)
    burn = min(n, int(10.0 / max(1e-12, 1.0 - a)) + 64)
    white = rng.standard_normal((2, n + burn))
    env = lfilter([gain], [1.0, -a], white, axis=1)[:, burn:]
    phase = 2.0 * math.pi * np.cumsum(f_center_hz) / fs
    return env[0] * np.cos(phase) + env[1] * np.sin(phase)


def synthesize_run(spec: RunSpec, array: ArraySpec, exc: ExcitationParams) -> RunRecord:
    """Generate the sensor matrix and reference channels for one run.

    Deterministic in (spec.seed, array, exc). Rejects configurations where
    the excitation band would alias (band center above Nyquist for the peak
    profile speed).
    """
    fs = array.sensor_rate_hz
    n = int(round(spec.duration_s * fs))
    v_nom = spec.mach_class.nominal_speed
    v_min = min(v for _, v in spec.speed_bp)
    v_max = max(v for _, v in spec.speed_bp)
    f_c_max = exc.band_center_gain_hz * v_max
    if f_c_max * (1 + exc.band_width_frac) >= 0.5 * fs:
        raise ConfigError(
            f"excitation band ({f_c_max:.0f} Hz peak) too close to Nyquist "
            f"({0.5 * fs:.0f} Hz); lower band_center_gain_hz for this rate"
        )

    t = np.arange(n) / fs
    speed = spec.speed_at(t)
    aoa = spec.aoa_at(t)
    f_center = exc.band_center_gain_hz * speed
    halfwidth = exc.band_width_frac * exc.band_center_gain_hz * v_nom
    amp = exc.base_gain_v * (speed / v_nom) ** (exc.speed_exponent / 2.0)

    seq = np.random.SeedSequence(spec.seed)
    shared_seq, label_seq, *sensor_seqs = seq.spawn(2 + array.n_sensors)

    # Shared convecting component on a grid extended into negative time so
    # delayed lookups never fall off the front.
    tau_max = (array.n_sensors - 1) * array.sensor_pitch_m / (
        exc.convection_fraction * v_min
    )
    pre = int(math.ceil(tau_max * fs)) + 4
    f_center_ext = np.concatenate([np.full(pre, f_center[0]), f_center])
    shared = _band_voice(
        np.random.Generator(np.random.PCG64(shared_seq)), f_center_ext, halfwidth, fs
    )

    w_shared = math.sqrt(exc.shared_fraction)
    w_own = math.sqrt(1.0 - exc.shared_fraction)
    positions = np.linspace(-1.0, 1.0, array.n_sensors)  # nose -> base

    sensors = np.empty((array.n_sensors, n), dtype=np.float32)
    conv_speed = exc.convection_fraction * speed
    for i in range(array.n_sensors):
        rng = np.random.Generator(np.random.PCG64(sensor_seqs[i]))
        own = _band_voice(rng, f_center, halfwidth, fs)
        # Fractional-index linear interpolation of the delayed shared voice.
        tau = (i * array.sensor_pitch_m) / conv_speed
        idx = (t - tau) * fs + pre
        lo = np.floor(idx).astype(np.int64)
        np.clip(lo, 0, len(shared) - 2, out=lo)
        frac = idx - lo
        delayed = shared[lo] * (1.0 - frac) + shared[lo + 1] * frac
        tilt = 1.0 + exc.aoa_gradient_gain * aoa * positions[i]
        noise = exc.sensor_noise_rms * rng.standard_normal(n)
        sensors[i] = (tilt * amp * (w_shared * delayed + w_own * own) + noise).astype(
            np.float32
        )

    label_len = int(round(spec.duration_s * array.label_rate_hz))
    t_label = np.arange(label_len) / array.label_rate_hz
    true_speed = spec.speed_at(t_label)
    ref_aoa = spec.aoa_at(t_label)
    label_rng = np.random.Generator(np.random.PCG64(label_seq))
    if spec.mach_class is MachClass.M8:
        sigma = exc.label_noise_band90 / _Z95
        fluct = sigma * label_rng.standard_normal(label_len)
    else:
        # Piecewise-constant fluctuations held for 0.25 s segments.
        seg = max(1, int(round(0.25 * array.label_rate_hz)))
        n_seg = -(-label_len // seg)
        sigma = exc.m5_noise_scale * exc.label_noise_band90 / _Z95
        fluct = np.repeat(sigma * label_rng.standard_normal(n_seg), seg)[:label_len]
    ref_speed_raw = true_speed + fluct

    return RunRecord(
        spec=spec,
        array=array,
        sensors=sensors,
        ref_speed_raw=ref_speed_raw,
        ref_aoa=ref_aoa,
        true_speed=true_speed,
    )


# ---------------------------------------------------------------------------
# Run-record file format (binary, little-endian)
#
# offset 0   magic "VSR1"
#        4   u32 version (= 1)
#        8   u32 n_sensors
#        12  u64 n_samples
#        20  f64 sensor_rate_hz
#        28  f64 label_rate_hz
#        36  u32 label_len
#        40  u8  generator_family_id
#        41  15 reserved zero bytes
#        56  sensors as f32, sensor-major
#            ref_speed_raw, true_speed, ref_aoa as f64 * label_len
#            u32 metadata_len, UTF-8 JSON metadata
#        EOF-4  u32 CRC-32 over every preceding byte
# ---------------------------------------------------------------------------


def _metadata_blob(record: RunRecord) -> bytes:
    spec = record.spec
    meta = {
        "label": spec.label,
        "mach_class": spec.mach_class.value,
        "reynolds_level": spec.reynolds_level.value,
        "duration_s": spec.duration_s,
        "seed": spec.seed,
        "speed_profile": [list(p) for p in spec.speed_bp],
        "aoa_profile": [list(p) for p in spec.aoa_bp],
        "sensor_pitch_m": record.array.sensor_pitch_m,
        "generator_family": GENERATOR_FAMILY,
    }
    return json.dumps(meta, sort_keys=True).encode("utf-8")


def write_run(record: RunRecord, path) -> None:
    """Serialize a RunRecord; the write is atomic (temp file + rename)."""
    header = bytearray()
    header += _RUN_MAGIC
    header += np.array(_RUN_VERSION, "<u4").tobytes()
    header += np.array(record.array.n_sensors, "<u4").tobytes()
    header += np.array(record.n_samples, "<u8").tobytes()
    header += np.array(record.array.sensor_rate_hz, "<f8").tobytes()
    header += np.array(record.array.label_rate_hz, "<f8").tobytes()
    header += np.array(record.label_len, "<u4").tobytes()
    header += bytes([GENERATOR_FAMILY_ID]) + bytes(15)
    assert len(header) == _HEADER_BYTES

    meta = _metadata_blob(record)
    crc = 0
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        for chunk in (
            bytes(header),
            np.ascontiguousarray(record.sensors, dtype="<f4").tobytes(),
            np.ascontiguousarray(record.ref_speed_raw, dtype="<f8").tobytes(),
            np.ascontiguousarray(record.true_speed, dtype="<f8").tobytes(),
            np.ascontiguousarray(record.ref_aoa, dtype="<f8").tobytes(),
            np.array(len(meta), "<u4").tobytes(),
            meta,
        ):
            fh.write(chunk)
            crc = zlib.crc32(chunk, crc)
        fh.write(np.array(crc & 0xFFFFFFFF, "<u4").tobytes())
    os.replace(tmp, path)


def _read_exact(fh, count: int, offset: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise DataError(
            f"truncated run file while reading {what} at offset {offset}: "
            f"expected {count} bytes, got {len(buf)}"
        )
    return buf


def read_run(path) -> RunRecord:
    """Read a run file written by write_run, verifying structure and CRC."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        header = _read_exact(fh, _HEADER_BYTES, 0, "header")
        if header[:4] != _RUN_MAGIC:
            raise DataError(
                f"bad magic at offset 0: expected {_RUN_MAGIC!r}, got {header[:4]!r}"
            )
        version = int(np.frombuffer(header, "<u4", 1, 4)[0])
        if version != _RUN_VERSION:
            raise DataError(f"unsupported run-file version {version} (expected 1)")
        n_sensors = int(np.frombuffer(header, "<u4", 1, 8)[0])
        n_samples = int(np.frombuffer(header, "<u8", 1, 12)[0])
        sensor_rate = float(np.frombuffer(header, "<f8", 1, 20)[0])
        label_rate = float(np.frombuffer(header, "<f8", 1, 28)[0])
        label_len = int(np.frombuffer(header, "<u4", 1, 36)[0])
        family = header[40]
        if family != GENERATOR_FAMILY_ID:
            raise DataError(f"unknown generator family id {family}")

        offset = _HEADER_BYTES
        sens_bytes = n_sensors * n_samples * 4
        expected = _HEADER_BYTES + sens_bytes + 3 * 8 * label_len + 4 + 4
        if size < expected:
            raise DataError(
                f"truncated run file: expected at least {expected} bytes, got {size}"
            )
        sensors = np.frombuffer(
            _read_exact(fh, sens_bytes, offset, "sensor matrix"), "<f4"
        ).reshape(n_sensors, n_samples)
        offset += sens_bytes
        refs = []
        for what in ("ref_speed_raw", "true_speed", "ref_aoa"):
            refs.append(
                np.frombuffer(_read_exact(fh, 8 * label_len, offset, what), "<f8")
            )
            offset += 8 * label_len
        meta_len = int(
            np.frombuffer(_read_exact(fh, 4, offset, "metadata length"), "<u4")[0]
        )
        offset += 4
        meta_raw = _read_exact(fh, meta_len, offset, "metadata blob")
        offset += meta_len
        stored_crc = int(np.frombuffer(_read_exact(fh, 4, offset, "CRC"), "<u4")[0])
        if fh.read(1):
            raise DataError(f"trailing bytes after CRC at offset {offset + 4}")

    with open(path, "rb") as fh:
        payload = fh.read(size - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise DataError(f"CRC mismatch in {path}")

    try:
        meta = json.loads(meta_raw.decode("utf-8"))
        spec = RunSpec(
            label=meta["label"],
            mach_class=MachClass(meta["mach_class"]),
            reynolds_level=ReynoldsLevel(meta["reynolds_level"]),
            duration_s=meta["duration_s"],
            speed_bp=tuple((p[0], p[1]) for p in meta["speed_profile"]),
            aoa_bp=tuple((p[0], p[1]) for p in meta["aoa_profile"]),
            seed=meta["seed"],
        )
        array = ArraySpec(
            n_sensors=n_sensors,
            sensor_pitch_m=meta["sensor_pitch_m"],
            sensor_rate_hz=sensor_rate,
            label_rate_hz=label_rate,
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed run-file metadata: {exc}") from exc

    return RunRecord(
        spec=spec,
        array=array,
        sensors=sensors,
        ref_speed_raw=refs[0],
        true_speed=refs[1],
        ref_aoa=refs[2],
    )
