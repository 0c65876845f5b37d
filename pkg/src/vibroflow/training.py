"""MSE training loop with validation-based early stopping.

Training minimizes mean-squared error with an adaptive-moment optimizer
(decay rates 0.9/0.999, epsilon 1e-8) over per-epoch seeded shuffles.
Validation loss is tracked every epoch; the returned model is the theta
snapshot at the minimum-validation-loss epoch (earliest epoch on ties),
and training stops once validation has not improved for `patience`
consecutive epochs.

Targets are standardized internally (per-component mean/std from the
training labels only) so the optimizer sees O(1) residuals regardless of
physical units; the inverse affine map is absorbed into the head weights
of the returned model, which therefore predicts in physical units (m/s)
directly. Trace losses are reported in the standardized space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .network import ModelState, NormStats, backward, forward_batch, norm_stats_from_windows, param_layout

_SD_FLOOR = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 2000
    patience: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")


@dataclass(frozen=True)
class TrainTrace:
    """Per-epoch losses plus the best/stopping epoch bookkeeping."""

    train_loss: np.ndarray = field(repr=False)
    val_loss: np.ndarray = field(repr=False)
    best_epoch: int = 0
    stopped_epoch: int = 0


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over batch entries and output components of squared error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ConfigError("mse_loss of an empty batch")
    r = pred - target
    return float(np.mean(r * r))


class Adam:
    """Adaptive-moment optimizer over one flat parameter vector."""

    def __init__(self, n_params: int, config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.epsilon
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m += (1.0 - self.beta1) * (grad - self.m)
        self.v += (1.0 - self.beta2) * (grad * grad - self.v)
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _stack(windows, indices=None) -> np.ndarray:
    if indices is None:
        return np.stack([w.sensors for w in windows])
    return np.stack([windows[i].sensors for i in indices])


def _labels(windows) -> np.ndarray:
    return np.stack([np.asarray(w.label, dtype=np.float64) for w in windows])


def _absorb_target_scaling(state: ModelState, mu: np.ndarray, sd: np.ndarray) -> ModelState:
    """Fold the target de-standardization affine map into the head layer."""
    theta = state.theta.copy()
    offset = 0
    views = {}
    for name, shape in param_layout(state.config):
        size = int(np.prod(shape))
        views[name] = theta[offset : offset + size].reshape(shape)
        offset += size
    views["head.weight"] *= sd[:, None]
    views["head.bias"][...] = sd * views["head.bias"] + mu
    return ModelState(config=state.config, theta=theta)


def fit(
    init_state: ModelState,
    train_windows,
    val_windows,
    config: TrainConfig,
    norm_stats: NormStats | None = None,
    log_every: int = 0,
) -> tuple[ModelState, TrainTrace]:
    """Train until max_epochs or until patience runs out without validation
    improvement; returns the best-validation model (physical units) and the
    full trace. Deterministic given (init_state, config.seed, data)."""
    if not train_windows or not val_windows:
        raise ConfigError("fit requires nonempty train and validation window sets")
    k = init_state.config.head_out
    if train_windows[0].label.shape != (k,):
        raise ConfigError(
            f"window labels have shape {train_windows[0].label.shape}, "
            f"model head expects ({k},)"
        )
    stats = norm_stats if norm_stats is not None else norm_stats_from_windows(train_windows)

    y_train = _labels(train_windows)
    y_val = _labels(val_windows)
    mu = y_train.mean(axis=0)
    sd = y_train.std(axis=0)
    sd = np.where(sd < _SD_FLOOR, 1.0, sd)
    y_train_n = (y_train - mu) / sd
    y_val_n = (y_val - mu) / sd
    x_val = _stack(val_windows)

    theta = init_state.theta.copy()
    opt = Adam(len(theta), config)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = len(train_windows)

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_epoch = 0
    best_val = np.inf
    best_theta = theta.copy()

    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            batch = _stack(train_windows, idx)
            state = ModelState(config=init_state.config, theta=theta)
            loss, grad = backward(state, stats, batch, y_train_n[idx])
            if not np.isfinite(loss):
                raise _diverged(epoch, train_losses, val_losses, best_epoch)
            opt.step(theta, grad)
            loss_sum += loss * len(idx)
        train_losses.append(loss_sum / n)

        state = ModelState(config=init_state.config, theta=theta)
        val = mse_loss(forward_batch(state, stats, x_val), y_val_n)
        val_losses.append(val)
        if not np.isfinite(val):
            raise _diverged(epoch, train_losses, val_losses, best_epoch)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_theta = theta.copy()
        if log_every and (epoch % log_every == 0 or epoch == config.max_epochs - 1):
            print(
                f"    epoch {epoch:4d}  train {train_losses[-1]:.3e}  "
                f"val {val:.3e}  best {best_epoch}"
            )
        if epoch - best_epoch >= config.patience:
            break

    trace = TrainTrace(
        train_loss=np.asarray(train_losses),
        val_loss=np.asarray(val_losses),
        best_epoch=best_epoch,
        stopped_epoch=len(train_losses) - 1,
    )
    best_state = _absorb_target_scaling(
        ModelState(config=init_state.config, theta=best_theta), mu, sd
    )
    return best_state, trace


def _diverged(epoch, train_losses, val_losses, best_epoch) -> NumericalError:
    err = NumericalError(f"non-finite loss at epoch {epoch}")
    err.trace = TrainTrace(
        train_loss=np.asarray(train_losses),
        val_loss=np.asarray(val_losses),
        best_epoch=best_epoch,
        stopped_epoch=max(len(train_losses) - 1, 0),
    )
    return err


def retrain_ensemble(task, seeds) -> list[tuple[ModelState, TrainTrace]]:
    """Run `task(seed)` for each seed; seeds must be distinct and >= 2.

    `task` is expected to build a fresh initialization and shuffle stream
    from the seed and return a (ModelState, TrainTrace) pair. Failures are
    re-raised tagged with the offending seed.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("an ensemble needs at least 2 members")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"ensemble seeds must be distinct, got {seeds}")
    members = []
    for seed in seeds:
        try:
            members.append(task(seed))
        except Exception as exc:
            raise type(exc)(f"ensemble member with seed {seed} failed: {exc}") from exc
    return members


def write_trace_csv(trace: TrainTrace, path) -> None:
    """`epoch,train_loss,val_loss,is_best` rows for one fit."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,is_best\n")
        for e, (tr, va) in enumerate(zip(trace.train_loss, trace.val_loss)):
            fh.write(f"{e},{tr:.17g},{va:.17g},{int(e == trace.best_epoch)}\n")
