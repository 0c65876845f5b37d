"""Flow-state estimation from structural vibration sensor arrays.

Pipeline: synthesize a surrogate wind-tunnel campaign (`synth`), window it
under a leakage-safe center-block holdout (`windows`), train a small 2D
convolutional regressor with hand-derived gradients (`network`,
`training`), post-process predictions with a sliding median (`filters`),
and report per-run error statistics (`metrics`). The `cli` module wires
the studies together.
"""

from .errors import ConfigError, DataError, NumericalError, VibroflowError
from .filters import (
    FluctuationStats,
    MedianMode,
    TimeSeries,
    fluctuation_band,
    lowpass_reference,
    sliding_median,
)
from .flowstate import (
    BodyVelocity,
    EstimationTarget,
    FlowState,
    aoa_from_components,
    body_components,
    speed_from_components,
)
from .metrics import (
    ErrorSummary,
    PredictionLog,
    PredictionSeries,
    Quantity,
    Stage,
    abs_error,
    build_prediction_log,
    holdout_sweep_report,
    percentile,
    rel_error,
    summarize,
)
from .network import (
    ModelConfig,
    ModelState,
    NormStats,
    backward,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    min_input_length,
    norm_stats_from_windows,
    param_count,
    save_checkpoint,
)
from .synth import (
    ArraySpec,
    ExcitationParams,
    MachClass,
    ReynoldsLevel,
    RunRecord,
    RunSpec,
    default_campaign,
    read_run,
    records_equal,
    synthesize_run,
    write_run,
)
from .training import Adam, TrainConfig, TrainTrace, fit, mse_loss, retrain_ensemble
from .windows import (
    Partition,
    SplitSpec,
    TimeRange,
    Window,
    center_block_partition,
    extract_windows,
    filtered_reference_speed,
    holdout_sweep_specs,
    window_label,
    window_starts,
    windows_within,
)

__version__ = "0.1.0"
