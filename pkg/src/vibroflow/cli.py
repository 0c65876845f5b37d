"""Command-line orchestration of the three studies.

Verbs:

* ``simulate`` - synthesize the selected campaign runs to binary run files,
* ``train``    - fit the regressor for one task (zero_aoa -> scalar speed,
  nonzero_aoa -> body velocity components) under the center-block holdout,
* ``evaluate`` - produce error CSVs (raw and median-filtered stages) from a
  checkpoint,
* ``sweep``    - holdout-fraction study (10..50%) with retrained ensembles,
* ``report``   - print resolved configuration defaults.

Configuration resolves in three layers: profile defaults (full scale, or
the desk-scale CI profile with ``--desk-scale``), then an INI-style config
file (key = value sections), then explicit CLI flags. Every results file
embeds the resolved configuration as ``# key = value`` provenance lines
(output paths excluded so reruns into different directories stay byte
identical). All writes are atomic (temp file + rename).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, DataError, NumericalError, VibroflowError
from .flowstate import EstimationTarget
from .metrics import (
    MEDIAN_WINDOW,
    PredictionLog,
    Quantity,
    Stage,
    SweepRow,
    build_prediction_log,
    holdout_sweep_report,
    summarize,
)
from .network import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .synth import (
    ArraySpec,
    ExcitationParams,
    RunRecord,
    default_campaign,
    read_run,
    synthesize_run,
    write_run,
)
from .training import TrainConfig, fit, retrain_ensemble, write_trace_csv
from .windows import (
    SplitSpec,
    center_block_partition,
    extract_windows,
    filtered_reference_speed,
    holdout_sweep_specs,
    windows_within,
    write_partition_manifest,
)
from .network import norm_stats_from_windows

TASKS = {
    "zero_aoa": ("Z-", EstimationTarget.SCALAR_SPEED),
    "nonzero_aoa": ("NZ-", EstimationTarget.BODY_COMPONENTS),
}
SWEEP_QUANTITY = {
    "zero_aoa": Quantity.ZERO_AOA_SPEED,
    "nonzero_aoa": Quantity.AOA,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved settings for one invocation."""

    runs: str = "all"  # "all", "all-zero-aoa", "all-nonzero-aoa", or CSV labels
    duration_s: float = 16.0
    seed: int = 42
    array: ArraySpec = ArraySpec()
    excitation: ExcitationParams = ExcitationParams()
    split: SplitSpec = SplitSpec()
    window_s: float = 0.016
    lowpass_window_s: float = 0.5
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    retrains: int = 5
    log_every: int = 0
    out_dir: str = "out"


def full_profile() -> ExperimentConfig:
    """Paper-scale geometry: 250 kHz sensors over 16 s runs."""
    return ExperimentConfig()


def desk_profile() -> ExperimentConfig:
    """Reduced CI profile: 25 kHz sensors, 4 s runs, lighter model and
    training budget; all window arithmetic still derives from the rates."""
    return ExperimentConfig(
        duration_s=4.0,
        array=ArraySpec(sensor_rate_hz=25_000.0),
        excitation=ExcitationParams(band_center_gain_hz=4.0),
        split=SplitSpec(train_stride_s=0.008),
        model=ModelConfig(stage_channels=(8, 16, 32)),
        train=TrainConfig(learning_rate=3e-3, max_epochs=60, patience=15),
        retrains=3,
    )


def _derive_seed(base: int, *path: int) -> int:
    return int(np.random.SeedSequence((base,) + path).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

_INT = int
_FLOAT = float


def _parse_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


# (section, key) -> (target path, converter)
_CONFIG_KEYS = {
    ("campaign", "runs"): ("runs", str),
    ("campaign", "duration_s"): ("duration_s", _FLOAT),
    ("campaign", "seed"): ("seed", _INT),
    ("array", "n_sensors"): ("array.n_sensors", _INT),
    ("array", "sensor_pitch_m"): ("array.sensor_pitch_m", _FLOAT),
    ("array", "sensor_rate_hz"): ("array.sensor_rate_hz", _FLOAT),
    ("array", "label_rate_hz"): ("array.label_rate_hz", _FLOAT),
    ("excitation", "base_gain_v"): ("excitation.base_gain_v", _FLOAT),
    ("excitation", "speed_exponent"): ("excitation.speed_exponent", _FLOAT),
    ("excitation", "convection_fraction"): ("excitation.convection_fraction", _FLOAT),
    ("excitation", "aoa_gradient_gain"): ("excitation.aoa_gradient_gain", _FLOAT),
    ("excitation", "band_center_gain_hz"): ("excitation.band_center_gain_hz", _FLOAT),
    ("excitation", "label_noise_band90"): ("excitation.label_noise_band90", _FLOAT),
    ("excitation", "sensor_noise_rms"): ("excitation.sensor_noise_rms", _FLOAT),
    ("excitation", "band_width_frac"): ("excitation.band_width_frac", _FLOAT),
    ("excitation", "shared_fraction"): ("excitation.shared_fraction", _FLOAT),
    ("excitation", "m5_noise_scale"): ("excitation.m5_noise_scale", _FLOAT),
    ("split", "test_frac"): ("split.test_frac", _FLOAT),
    ("split", "val_frac"): ("split.val_frac", _FLOAT),
    ("split", "train_stride_s"): ("split.train_stride_s", _FLOAT),
    ("split", "eval_stride_s"): ("split.eval_stride_s", _FLOAT),
    ("split", "window_s"): ("window_s", _FLOAT),
    ("split", "lowpass_window_s"): ("lowpass_window_s", _FLOAT),
    ("model", "stage_channels"): ("model.stage_channels", _parse_tuple),
    ("model", "kernel"): ("model.kernel", _parse_tuple),
    ("model", "stage_time_pool"): ("model.stage_time_pool", _parse_tuple),
    ("model", "norm_groups"): ("model.norm_groups", _INT),
    ("model", "leaky_slope"): ("model.leaky_slope", _FLOAT),
    ("model", "adaptive_pool_out"): ("model.adaptive_pool_out", _parse_tuple),
    ("train", "batch_size"): ("train.batch_size", _INT),
    ("train", "learning_rate"): ("train.learning_rate", _FLOAT),
    ("train", "max_epochs"): ("train.max_epochs", _INT),
    ("train", "patience"): ("train.patience", _INT),
    ("train", "seed"): ("train.seed", _INT),
    ("train", "retrains"): ("retrains", _INT),
    ("train", "log_every"): ("log_every", _INT),
    ("output", "dir"): ("out_dir", str),
}


def _apply_setting(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    if "." not in path:
        return replace(cfg, **{path: value})
    group, attr = path.split(".", 1)
    sub = getattr(cfg, group)
    return replace(cfg, **{group: replace(sub, **{attr: value})})


def load_config_file(cfg: ExperimentConfig, path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in parser.sections():
        for key, raw in parser.items(section):
            spec = _CONFIG_KEYS.get((section, key))
            if spec is None:
                raise ConfigError(f"unknown config key [{section}] {key}")
            target, conv = spec
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
            try:
                cfg = _apply_setting(cfg, target, value)
            except VibroflowError:
                raise
    return cfg


def resolved_settings(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """Flat, sorted key/value view of the configuration (output dir omitted
    so provenance stays byte-stable across workspaces)."""
    items: list[tuple[str, str]] = [
        ("campaign.runs", cfg.runs),
        ("campaign.duration_s", f"{cfg.duration_s:.17g}"),
        ("campaign.seed", str(cfg.seed)),
        ("split.window_s", f"{cfg.window_s:.17g}"),
        ("split.lowpass_window_s", f"{cfg.lowpass_window_s:.17g}"),
        ("train.retrains", str(cfg.retrains)),
        ("median.window", str(MEDIAN_WINDOW)),
    ]
    for group in ("array", "excitation", "split", "model", "train"):
        obj = getattr(cfg, group)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, float):
                text = f"{v:.17g}"
            elif isinstance(v, tuple):
                text = ",".join(str(x) for x in v)
            else:
                text = str(v)
            items.append((f"{group}.{f.name}", text))
    return sorted(set(items))


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path: str, cfg: ExperimentConfig, header: str, rows) -> None:
    lines = [f"# {k} = {v}" for k, v in resolved_settings(cfg)]
    lines.append(header)
    lines.extend(rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return "" if x != x else f"{x:.17g}"  # NaN -> empty cell


def selected_specs(cfg: ExperimentConfig) -> list:
    campaign = default_campaign(duration_s=cfg.duration_s, base_seed=cfg.seed)
    if cfg.runs == "all":
        return campaign
    if cfg.runs == "all-zero-aoa":
        return [s for s in campaign if s.label.startswith("Z-")]
    if cfg.runs == "all-nonzero-aoa":
        return [s for s in campaign if s.label.startswith("NZ-")]
    wanted = [r.strip() for r in cfg.runs.split(",") if r.strip()]
    by_label = {s.label: s for s in campaign}
    missing = [w for w in wanted if w not in by_label]
    if missing:
        raise ConfigError(f"unknown run labels: {', '.join(missing)}")
    return [by_label[w] for w in wanted]


def _run_path(cfg: ExperimentConfig, label: str) -> str:
    return os.path.join(cfg.out_dir, "runs", f"{label}.vsr")


def _load_task_records(cfg: ExperimentConfig, task: str) -> list[RunRecord]:
    prefix = TASKS[task][0]
    specs = [s for s in selected_specs(cfg) if s.label.startswith(prefix)]
    if not specs:
        raise ConfigError(f"no runs selected for task {task}")
    records = []
    for spec in specs:
        path = _run_path(cfg, spec.label)
        if not os.path.exists(path):
            raise DataError(f"run file {path} not found; run `simulate` first")
        records.append(read_run(path))
    return records


def _partition_all(cfg: ExperimentConfig, records, split: SplitSpec):
    return {
        r.spec.label: center_block_partition(
            r.spec.duration_s, split, r.array.sensor_rate_hz
        )
        for r in records
    }


def _task_windows(cfg: ExperimentConfig, records, partitions, target):
    """(train windows with overlap stride, validation windows non-overlap)."""
    train_w, val_w = [], []
    for r in records:
        filtered = filtered_reference_speed(r, cfg.lowpass_window_s)
        part = partitions[r.spec.label]
        train_w.extend(
            extract_windows(
                r, part.train, cfg.split.train_stride_s, cfg.window_s, target, filtered
            )
        )
        val_w.extend(
            extract_windows(
                r,
                part.validation,
                cfg.split.eval_stride(cfg.window_s),
                cfg.window_s,
                target,
                filtered,
            )
        )
    return train_w, val_w


def _fit_task(cfg: ExperimentConfig, records, partitions, target, member_seed: int):
    train_w, val_w = _task_windows(cfg, records, partitions, target)
    if not train_w or not val_w:
        raise DataError("partitioning produced no train or validation windows")
    # Leakage audit: standardization statistics may only see train ranges.
    for r in records:
        part = partitions[r.spec.label]
        mine = [w for w in train_w if w.run_label == r.spec.label]
        if not windows_within(mine, part.train):
            raise DataError(f"train window escaped its ranges in {r.spec.label}")
    stats = norm_stats_from_windows(train_w)
    model_cfg = replace(cfg.model, in_sensors=records[0].array.n_sensors, head_out=target.k)
    init = init_params(model_cfg, seed=_derive_seed(member_seed, 0))
    train_cfg = replace(cfg.train, seed=_derive_seed(member_seed, 1))
    state, trace = fit(
        init, train_w, val_w, train_cfg, norm_stats=stats, log_every=cfg.log_every
    )
    return state, stats, trace


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, force: bool = False) -> list[str]:
    specs = selected_specs(cfg)
    run_dir = os.path.join(cfg.out_dir, "runs")
    os.makedirs(run_dir, exist_ok=True)
    paths = [_run_path(cfg, s.label) for s in specs]
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not force:
        raise ConfigError(
            f"{len(existing)} run file(s) already exist (e.g. {existing[0]}); "
            "use --force to overwrite"
        )
    for spec, path in zip(specs, paths):
        record = synthesize_run(spec, cfg.array, cfg.excitation)
        write_run(record, path)
        print(f"wrote {path} ({record.n_samples} samples x {record.array.n_sensors} sensors)")
    return paths


def cmd_train(cfg: ExperimentConfig, task: str) -> str:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    target = TASKS[task][1]
    records = _load_task_records(cfg, task)
    partitions = _partition_all(cfg, records, cfg.split)

    task_dir = os.path.join(cfg.out_dir, task)
    part_dir = os.path.join(task_dir, "partitions")
    os.makedirs(part_dir, exist_ok=True)
    for r in records:
        write_partition_manifest(
            os.path.join(part_dir, f"{r.spec.label}.txt"),
            r.spec.label,
            partitions[r.spec.label],
            cfg.split,
            r.array.sensor_rate_hz,
        )

    state, stats, trace = _fit_task(cfg, records, partitions, target, cfg.train.seed)
    ckpt = os.path.join(task_dir, "checkpoint.vsck")
    save_checkpoint(state, stats, ckpt)
    write_trace_csv(trace, os.path.join(task_dir, "trace.csv"))
    print(
        f"trained {task}: best epoch {trace.best_epoch} of {trace.stopped_epoch + 1}, "
        f"val loss {trace.val_loss[trace.best_epoch]:.3e} -> {ckpt}"
    )
    return ckpt


_SUMMARY_COLUMNS = [
    (Stage.RAW, Quantity.ZERO_AOA_SPEED, "raw_zero_aoa_speed"),
    (Stage.RAW, Quantity.AOA, "raw_aoa"),
    (Stage.RAW, Quantity.SPEED_MAGNITUDE, "raw_speed_magnitude"),
    (Stage.MEDIAN_FILTERED, Quantity.ZERO_AOA_SPEED, "median_zero_aoa_speed"),
    (Stage.MEDIAN_FILTERED, Quantity.AOA, "median_aoa"),
    (Stage.MEDIAN_FILTERED, Quantity.SPEED_MAGNITUDE, "median_speed_magnitude"),
]
_SUMMARY_ROWS = ("mean_abs", "p90_abs", "max_abs", "mean_rel", "p90_rel", "max_rel")


def _task_quantities(target: EstimationTarget) -> list[Quantity]:
    if target is EstimationTarget.SCALAR_SPEED:
        return [Quantity.ZERO_AOA_SPEED]
    return [Quantity.AOA, Quantity.SPEED_MAGNITUDE]


def _merge_summary(path: str, cells: dict[tuple[str, str], str]) -> dict:
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            lines = [l.rstrip("\n") for l in fh if not l.startswith("#")]
        header = lines[0].split(",")
        for line in lines[1:]:
            parts = line.split(",")
            for col, value in zip(header[1:], parts[1:]):
                if value and (parts[0], col) not in cells:
                    cells[(parts[0], col)] = value
    return cells


def cmd_evaluate(cfg: ExperimentConfig, task: str, checkpoint: str) -> None:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    target = TASKS[task][1]
    state, stats = load_checkpoint(checkpoint)
    if state.config.head_out != target.k:
        raise ConfigError(
            f"checkpoint head has k={state.config.head_out} outputs but task "
            f"{task} needs k={target.k}"
        )
    records = _load_task_records(cfg, task)
    partitions = _partition_all(cfg, records, cfg.split)
    log = build_prediction_log(
        state, stats, records, partitions, target, cfg.window_s
    )

    task_dir = os.path.join(cfg.out_dir, task)
    os.makedirs(task_dir, exist_ok=True)
    quantities = _task_quantities(target)

    rows = []
    pooled = {}
    for quantity in quantities:
        for stage in Stage:
            for s in summarize(log, stage, quantity):
                if s.run_label == "ALL":
                    pooled[(stage, quantity)] = s
                else:
                    rows.append(s)
    rows.sort(key=lambda s: (s.run_label, s.split, s.quantity.value, s.stage.value))
    _write_csv(
        os.path.join(task_dir, "per_run_errors.csv"),
        cfg,
        "run,split,quantity,stage,mean_abs,p90_abs,max_abs,mean_rel,p90_rel,max_rel",
        [
            f"{s.run_label},{s.split},{s.quantity.value},{s.stage.value},"
            f"{_fmt(s.mean_abs)},{_fmt(s.p90_abs)},{_fmt(s.max_abs)},"
            f"{_fmt(s.mean_rel)},{_fmt(s.p90_rel)},{_fmt(s.max_rel)}"
            for s in rows
        ],
    )

    cells: dict[tuple[str, str], str] = {}
    for (stage, quantity), s in pooled.items():
        col = next(c for st, q, c in _SUMMARY_COLUMNS if st is stage and q is quantity)
        for stat in _SUMMARY_ROWS:
            cells[(stat, col)] = _fmt(getattr(s, stat))
    summary_path = os.path.join(cfg.out_dir, "summary.csv")
    cells = _merge_summary(summary_path, cells)
    col_names = [c for _, _, c in _SUMMARY_COLUMNS]
    _write_csv(
        summary_path,
        cfg,
        "statistic," + ",".join(col_names),
        [
            stat + "," + ",".join(cells.get((stat, c), "") for c in col_names)
            for stat in _SUMMARY_ROWS
        ],
    )

    _write_timeseries(cfg, task_dir, log, target)
    print(f"evaluated {task}: {len(rows)} summary rows -> {task_dir}")


def _write_timeseries(cfg: ExperimentConfig, task_dir: str, log: PredictionLog, target):
    """Plot-ready per-window test-split streams, one file per quantity.

    Runs are concatenated on a continuous plotting axis via t_offset;
    filtered estimates appear on the row nearest each median timestamp.
    """
    from .metrics import _derive, _median_stage, _reference  # local reuse

    quantities = _task_quantities(target)
    names = {
        Quantity.ZERO_AOA_SPEED: "timeseries.csv",
        Quantity.SPEED_MAGNITUDE: "timeseries.csv",
        Quantity.AOA: "timeseries_aoa.csv",
    }
    k = target.k
    for quantity in quantities:
        lines = []
        offset = 0.0
        for series in sorted(
            (s for s in log.series if s.split == "test"), key=lambda s: s.run_label
        ):
            est = _derive(quantity, k, series.pred)
            ref = _reference(quantity, series)
            filt_col = [""] * len(series.times)
            pair = _median_stage(series, quantity, k)
            if pair is not None:
                dt = float(np.median(np.diff(series.times)))
                t_f = series.times[0] + dt * (
                    0.5 * (MEDIAN_WINDOW - 1)
                    + MEDIAN_WINDOW * np.arange(len(pair[0]))
                )
                for tf, fv in zip(t_f, pair[0]):
                    idx = int(np.argmin(np.abs(series.times - tf)))
                    filt_col[idx] = f"{fv:.17g}"
            for i, t in enumerate(series.times):
                lines.append(
                    f"{series.run_label},{t:.17g},{t + offset:.17g},"
                    f"{ref[i]:.17g},{est[i]:.17g},{filt_col[i]}"
                )
            offset += series.times[-1] + (series.times[1] - series.times[0])
        _write_csv(
            os.path.join(task_dir, names[quantity]),
            cfg,
            "run,t,t_offset,ref,raw_est,filtered_est",
            lines,
        )


def cmd_sweep(cfg: ExperimentConfig, task: str) -> str:
    """Five-fraction holdout sweep with `cfg.retrains` retrained fits each."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    target = TASKS[task][1]
    quantity = SWEEP_QUANTITY[task]
    records = _load_task_records(cfg, task)
    member_seeds = [_derive_seed(cfg.train.seed, 100 + r) for r in range(cfg.retrains)]

    per_fraction: dict[float, list[dict[str, float]]] = {}
    for split in holdout_sweep_specs(cfg.split):
        partitions = _partition_all(cfg, records, split)
        sweep_cfg = replace(cfg, split=split)

        def task_fn(seed, _parts=partitions, _cfg=sweep_cfg):
            state, stats, trace = _fit_task(_cfg, records, _parts, target, seed)
            log = build_prediction_log(
                state, stats, records, _parts, target, _cfg.window_s, splits=("test",)
            )
            errs = {}
            for s in summarize(log, Stage.RAW, quantity):
                if s.run_label != "ALL":
                    errs[s.run_label] = s.mean_abs
            return errs, trace

        members = retrain_ensemble(task_fn, member_seeds)
        per_fraction[split.test_frac] = [m[0] for m in members]
        print(
            f"fraction {split.test_frac:.0%}: "
            + ", ".join(
                f"{run} {np.mean([m[0][run] for m in members]):.3g}"
                for run in sorted(members[0][0])
            )
        )

    constant = {
        r.spec.label for r in records if r.spec.constant_condition
    }
    rows = holdout_sweep_report(per_fraction, constant)
    path = os.path.join(cfg.out_dir, f"sweep_{task}.csv")
    _write_csv(
        path,
        cfg,
        "fraction,run,mean_err,sigma",
        [
            f"{r.fraction:.17g},{r.run_label},{r.mean_err:.17g},{r.sigma:.17g}"
            for r in rows
        ],
    )
    print(f"sweep written -> {path}")
    return path


def cmd_report(cfg: ExperimentConfig) -> None:
    for key, value in resolved_settings(cfg):
        print(f"{key} = {value}")


# ---------------------------------------------------------------------------
# Argument parsing / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vibroflow",
        description="Flow-state estimation from structural vibration arrays.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file (key = value sections)")
        p.add_argument("--desk-scale", action="store_true", help="use the reduced CI profile")
        p.add_argument("--runs", help="run selection (labels CSV or all / all-zero-aoa / all-nonzero-aoa)")
        p.add_argument("--seed", type=int, help="campaign base seed override")
        p.add_argument("--out", help="output directory (default: out)")

    p = sub.add_parser("simulate", help="synthesize campaign run files")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite existing run files")

    p = sub.add_parser("train", help="fit the regressor for one task")
    common(p)
    p.add_argument("--task", choices=sorted(TASKS), required=True)

    p = sub.add_parser("evaluate", help="error CSVs from a checkpoint")
    common(p)
    p.add_argument("--task", choices=sorted(TASKS), required=True)
    p.add_argument("--checkpoint", help="checkpoint path (default: <out>/<task>/checkpoint.vsck)")

    p = sub.add_parser("sweep", help="holdout-fraction study")
    common(p)
    p.add_argument("--task", choices=sorted(TASKS), required=True)
    p.add_argument("--retrains", type=int, help="retrained fits per fraction")

    p = sub.add_parser("report", help="print the resolved configuration")
    common(p)
    p.add_argument("--defaults", action="store_true", help="print defaults for the profile")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = desk_profile() if args.desk_scale else full_profile()
    if args.config:
        cfg = load_config_file(cfg, args.config)
    if args.runs:
        cfg = replace(cfg, runs=args.runs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "retrains", None):
        cfg = replace(cfg, retrains=args.retrains)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            cmd_simulate(cfg, force=args.force)
        elif args.command == "train":
            cmd_train(cfg, args.task)
        elif args.command == "evaluate":
            ckpt = args.checkpoint or os.path.join(
                cfg.out_dir, args.task, "checkpoint.vsck"
            )
            cmd_evaluate(cfg, args.task, ckpt)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.task)
        elif args.command == "report":
            cmd_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
