"""Fixed 2D convolutional regressor with hand-derived gradients.

The network maps a standardized (sensors x time) voltage window to a k-dim
flow-state vector through three identical stages followed by an adaptive
pooling head:

    [conv 3x7 (same on sensor axis, valid on time) -> group norm ->
     leaky ReLU -> time max pool] x stages
    -> adaptive mean pool to a fixed (sensor, time) grid -> affine head

Everything is float64 and built on im2col matrix products, with the
backward pass written out analytically (the test suite checks it against
central finite differences). Parameters live in one flat vector with a
deterministic layout (per stage: conv weight, conv bias, norm scale, norm
shift; then head weight, head bias) so checkpoints, optimizers, and
gradient checks all agree on coordinates.

Batches are processed in memory-capped chunks; this is safe because every
layer (group norm included) operates per sample, so outputs never depend
on batch composition.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

try:
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

from .errors import ConfigError, DataError, NumericalError

GROUP_NORM_EPS = 1e-5
_CKPT_MAGIC = b"VSCK"
_CKPT_VERSION = 1
# Rough per-chunk scratch budget for activations / im2col buffers.
_CHUNK_BYTES = 256 * 1024 * 1024


@dataclass(frozen=True)
class ModelConfig:
    """Architecture constants; every structural choice lives here."""

    in_sensors: int = 48
    stage_channels: tuple[int, ...] = (32, 64, 128)
    kernel: tuple[int, int] = (3, 7)  # (sensor, time)
    stage_time_pool: tuple[int, ...] = (4, 4, 1)
    norm_groups: int = 8
    leaky_slope: float = 0.1
    adaptive_pool_out: tuple[int, int] = (4, 8)
    head_out: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "stage_time_pool", tuple(self.stage_time_pool))
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "adaptive_pool_out", tuple(self.adaptive_pool_out))
        if len(self.stage_channels) != len(self.stage_time_pool):
            raise ConfigError("stage_channels and stage_time_pool lengths differ")
        if not self.stage_channels:
            raise ConfigError("need at least one stage")
        for c in self.stage_channels:
            if c % self.norm_groups:
                raise ConfigError(
                    f"stage channels {c} not divisible by norm_groups {self.norm_groups}"
                )
        if min(self.adaptive_pool_out) < 1:
            raise ConfigError("adaptive_pool_out dims must be >= 1")
        if self.head_out < 1:
            raise ConfigError("head_out must be >= 1")
        if self.kernel[0] % 2 == 0:
            raise ConfigError("sensor kernel extent must be odd for same padding")


def param_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs defining the flat parameter vector."""
    kh, kw = config.kernel
    layout = []
    c_in = 1
    for i, c_out in enumerate(config.stage_channels):
        layout.append((f"conv{i}.weight", (c_out, c_in, kh, kw)))
        layout.append((f"conv{i}.bias", (c_out,)))
        layout.append((f"norm{i}.scale", (c_out,)))
        layout.append((f"norm{i}.shift", (c_out,)))
        c_in = c_out
    oh, ow = config.adaptive_pool_out
    layout.append(("head.weight", (config.head_out, c_in * oh * ow)))
    layout.append(("head.bias", (config.head_out,)))
    return layout


def param_count(config: ModelConfig) -> int:
    """Total trainable parameters for a configuration."""
    return sum(int(np.prod(shape)) for _, shape in param_layout(config))


def min_input_length(config: ModelConfig) -> int:
    """Smallest time extent for which every stage output is nonempty."""
    kw = config.kernel[1]
    need = 1
    for pool in reversed(config.stage_time_pool):
        need = need * pool + (kw - 1)
    return need


def _views(theta: np.ndarray, config: ModelConfig) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, shape in param_layout(config):
        size = int(np.prod(shape))
        out[name] = theta[offset : offset + size].reshape(shape)
        offset += size
    return out


@dataclass(frozen=True)
class ModelState:
    """Architecture plus the flat trainable-parameter vector."""

    config: ModelConfig
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        expected = param_count(self.config)
        if theta.shape != (expected,):
            raise ConfigError(
                f"theta has shape {theta.shape}, expected ({expected},)"
            )
        if not np.all(np.isfinite(theta)):
            raise NumericalError("theta contains non-finite values")
        object.__setattr__(self, "theta", theta)

    def params(self) -> dict[str, np.ndarray]:
        return _views(self.theta, self.config)


@dataclass(frozen=True)
class NormStats:
    """Per-sensor standardization constants, from training windows only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ConfigError("NormStats mean/std must be 1-D and same length")
        if np.any(std <= 0):
            raise ConfigError("NormStats std must be > 0 for every sensor")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def norm_stats_from_windows(windows) -> NormStats:
    """Accumulate per-sensor mean/std over a collection of windows."""
    if not windows:
        raise ConfigError("cannot compute NormStats from an empty window set")
    n_sensors = windows[0].sensors.shape[0]
    total = np.zeros(n_sensors)
    total_sq = np.zeros(n_sensors)
    count = 0
    for w in windows:
        x = np.asarray(w.sensors, dtype=np.float64)
        total += x.sum(axis=1)
        total_sq += (x * x).sum(axis=1)
        count += x.shape[1]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), 1e-12)
    return NormStats(mean=mean, std=std)


def init_params(config: ModelConfig, seed: int) -> ModelState:
    """Deterministic initialization: Glorot-uniform weights, zero biases and
    norm shifts, unit norm scales."""
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = np.zeros(param_count(config))
    views = _views(theta, config)
    kh, kw = config.kernel
    for name, shape in param_layout(config):
        v = views[name]
        if name.endswith(".weight"):
            if name.startswith("conv"):
                fan_in = shape[1] * kh * kw
                fan_out = shape[0] * kh * kw
            else:
                fan_in = shape[1]
                fan_out = shape[0]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            v[...] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".scale"):
            v[...] = 1.0
        # biases and norm shifts stay zero
    return ModelState(config=config, theta=theta)


# ---------------------------------------------------------------------------
# Layer primitives
#
# Convolutions run through direct-correlation numba kernels when available
# (an order of magnitude faster than materializing patch matrices in pure
# numpy); the im2col path below computes identical values and serves as the
# fallback. Both paths reduce in a fixed order, so results are reproducible
# run to run on a given build.
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_corr(xp, w, out):  # pragma: no cover - exercised via _conv_forward
        """out[b,o,s,t] += sum_{c,u,v} xp[b,c,s+u,t+v] * w[o,c,u,v]."""
        n_b, n_c, _, tp = xp.shape
        n_o, _, kh, kw = w.shape
        n_s = xp.shape[2] - kh + 1
        n_t = tp - kw + 1
        for bo in prange(n_b * n_o):
            b = bo // n_o
            o = bo % n_o
            for s in range(n_s):
                for c in range(n_c):
                    for u in range(kh):
                        row = xp[b, c, s + u]
                        for v in range(kw):
                            wv = w[o, c, u, v]
                            for t in range(n_t):
                                out[b, o, s, t] += wv * row[t + v]

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_corr_dw(xp, dz, dw):  # pragma: no cover - exercised via backward
        """dw[o,c,u,v] = sum_{b,s,t} dz[b,o,s,t] * xp[b,c,s+u,t+v]."""
        n_b, n_c, sp, tp = xp.shape
        n_o = dz.shape[1]
        n_s = dz.shape[2]
        n_t = dz.shape[3]
        kh = sp - n_s + 1
        kw = tp - n_t + 1
        for oc in prange(n_o * n_c):
            o = oc // n_c
            c = oc % n_c
            for u in range(kh):
                for v in range(kw):
                    acc = 0.0
                    for b in range(n_b):
                        for s in range(n_s):
                            drow = dz[b, o, s]
                            xrow = xp[b, c, s + u]
                            for t in range(n_t):
                                acc += drow[t] * xrow[t + v]
                    dw[o, c, u, v] = acc


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, C, Sp, Tp) -> (B, S_out*T_out, C*kh*kw) patch matrix."""
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    b, c, so, to = v.shape[:4]
    return v.transpose(0, 2, 3, 1, 4, 5).reshape(b, so * to, c * kh * kw)


def _correlate(xp: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Valid correlation of a padded input block with a kernel stack."""
    b, _, sp, tp = xp.shape
    c_out, _, kh, kw = weight.shape
    out_shape = (b, c_out, sp - kh + 1, tp - kw + 1)
    if _HAVE_NUMBA:
        out = np.zeros(out_shape)
        _nb_corr(xp, np.ascontiguousarray(weight), out)
        return out
    cols = _im2col(xp, kh, kw)
    z = cols @ weight.reshape(c_out, -1).T
    return z.reshape(b, out_shape[2], out_shape[3], c_out).transpose(0, 3, 1, 2)


def _conv_forward(x, weight, bias):
    kh = weight.shape[2]
    ph = kh // 2
    xp = np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (ph, ph), (0, 0))))
    z = _correlate(xp, weight) + bias[None, :, None, None]
    return z, xp


def _conv_backward(dz, xp, weight, need_dx: bool):
    c_out, c_in, kh, kw = weight.shape
    ph = kh // 2
    dz = np.ascontiguousarray(dz)
    if _HAVE_NUMBA:
        d_weight = np.empty_like(weight)
        _nb_corr_dw(xp, dz, d_weight)
    else:
        cols = _im2col(xp, kh, kw)
        dzf = dz.transpose(0, 2, 3, 1).reshape(-1, c_out)
        d_weight = (dzf.T @ cols.reshape(-1, c_in * kh * kw)).reshape(weight.shape)
    d_bias = dz.sum(axis=(0, 2, 3))
    if not need_dx:
        return None, d_weight, d_bias
    # Gradient w.r.t. the padded input is a full correlation with the
    # flipped kernel; the sensor padding then crops away.
    w_flip = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dzp = np.ascontiguousarray(
        np.pad(dz, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    )
    dxp = _correlate(dzp, w_flip)
    s = xp.shape[2] - 2 * ph
    dx = dxp[:, :, ph : ph + s, :]
    return dx, d_weight, d_bias


def _group_norm_forward(z, scale, shift, groups):
    b, c, s, t = z.shape
    cg = c // groups
    zg = z.reshape(b, groups, cg * s * t)
    mu = zg.mean(axis=2, keepdims=True)
    var = zg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + GROUP_NORM_EPS)
    xhat = ((zg - mu) * inv_std).reshape(b, c, s, t)
    y = scale[None, :, None, None] * xhat + shift[None, :, None, None]
    return y, xhat, inv_std[:, :, 0]


def _group_norm_backward(dy, xhat, inv_std, scale, groups):
    b, c, s, t = dy.shape
    cg = c // groups
    d_scale = np.einsum("bcst,bcst->c", dy, xhat)
    d_shift = dy.sum(axis=(0, 2, 3))
    dxhat = (dy * scale[None, :, None, None]).reshape(b, groups, cg * s * t)
    xh = xhat.reshape(b, groups, cg * s * t)
    m1 = dxhat.mean(axis=2, keepdims=True)
    m2 = (dxhat * xh).mean(axis=2, keepdims=True)
    dz = inv_std[:, :, None] * (dxhat - m1 - xh * m2)
    return dz.reshape(b, c, s, t), d_scale, d_shift


def _time_pool_forward(a, pool):
    if pool <= 1:
        return a, None
    b, c, s, t = a.shape
    t2 = t - (t % pool)
    blocks = a[..., :t2].reshape(b, c, s, t2 // pool, pool)
    arg = blocks.argmax(axis=4)
    out = np.take_along_axis(blocks, arg[..., None], axis=4)[..., 0]
    return out, arg


def _time_pool_backward(dout, pool, a_shape, arg):
    if pool <= 1:
        return dout
    b, c, s, t = a_shape
    t2 = t - (t % pool)
    dblocks = np.zeros((b, c, s, t2 // pool, pool))
    np.put_along_axis(dblocks, arg[..., None], dout[..., None], axis=4)
    da = np.zeros(a_shape)
    da[..., :t2] = dblocks.reshape(b, c, s, t2)
    return da


# --- fused stage tail: group norm -> leaky ReLU -> time max pool -----------

if _HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_group_stats(z, groups, eps, mean, inv_std):  # pragma: no cover
        n_b, n_c, n_s, n_t = z.shape
        cg = n_c // groups
        m = cg * n_s * n_t
        for bg in prange(n_b * groups):
            b = bg // groups
            g = bg % groups
            acc = 0.0
            for c in range(g * cg, (g + 1) * cg):
                for s in range(n_s):
                    row = z[b, c, s]
                    for t in range(n_t):
                        acc += row[t]
            mu = acc / m
            acc2 = 0.0
            for c in range(g * cg, (g + 1) * cg):
                for s in range(n_s):
                    row = z[b, c, s]
                    for t in range(n_t):
                        d = row[t] - mu
                        acc2 += d * d
            mean[b, g] = mu
            inv_std[b, g] = 1.0 / math.sqrt(acc2 / m + eps)

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_tail_forward(
        z, mean, inv_std, scale, shift, slope, pool, groups, xhat, pooled, arg
    ):  # pragma: no cover
        n_b, n_c, n_s, n_t = z.shape
        cg = n_c // groups
        tp = pooled.shape[3]
        for bc in prange(n_b * n_c):
            b = bc // n_c
            c = bc % n_c
            g = c // cg
            mu = mean[b, g]
            isd = inv_std[b, g]
            ga = scale[c]
            be = shift[c]
            for s in range(n_s):
                zrow = z[b, c, s]
                xrow = xhat[b, c, s]
                for t in range(n_t):
                    xrow[t] = (zrow[t] - mu) * isd
                for block in range(tp):
                    best = -1.0e300
                    best_i = 0
                    for j in range(pool):
                        t = block * pool + j
                        y = ga * xrow[t] + be
                        a = y if y >= 0.0 else slope * y
                        if a > best:
                            best = a
                            best_i = t
                    pooled[b, c, s, block] = best
                    arg[b, c, s, block] = best_i

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_tail_backward_dy(
        dpooled, xhat, scale, shift, slope, arg, dy, dsc_part, dsh_part
    ):  # pragma: no cover
        n_b, n_c, n_s, _ = xhat.shape
        tp = dpooled.shape[3]
        for bc in prange(n_b * n_c):
            b = bc // n_c
            c = bc % n_c
            ga = scale[c]
            be = shift[c]
            acc_sc = 0.0
            acc_sh = 0.0
            for s in range(n_s):
                xrow = xhat[b, c, s]
                drow = dy[b, c, s]
                for block in range(tp):
                    t = arg[b, c, s, block]
                    g = dpooled[b, c, s, block]
                    if ga * xrow[t] + be < 0.0:
                        g *= slope
                    drow[t] = g
                    acc_sc += g * xrow[t]
                    acc_sh += g
            dsc_part[b, c] = acc_sc
            dsh_part[b, c] = acc_sh

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_tail_backward_dz(
        dy, xhat, inv_std, scale, groups, dz
    ):  # pragma: no cover
        n_b, n_c, n_s, n_t = xhat.shape
        cg = n_c // groups
        m = cg * n_s * n_t
        for bg in prange(n_b * groups):
            b = bg // groups
            g = bg % groups
            m1 = 0.0
            m2 = 0.0
            for c in range(g * cg, (g + 1) * cg):
                ga = scale[c]
                for s in range(n_s):
                    drow = dy[b, c, s]
                    xrow = xhat[b, c, s]
                    for t in range(n_t):
                        dxh = ga * drow[t]
                        m1 += dxh
                        m2 += dxh * xrow[t]
            m1 /= m
            m2 /= m
            isd = inv_std[b, g]
            for c in range(g * cg, (g + 1) * cg):
                ga = scale[c]
                for s in range(n_s):
                    drow = dy[b, c, s]
                    xrow = xhat[b, c, s]
                    zrow = dz[b, c, s]
                    for t in range(n_t):
                        zrow[t] = isd * (ga * drow[t] - m1 - xrow[t] * m2)


def _stage_tail_forward(z, scale, shift, slope, pool, groups):
    """Group norm -> leaky ReLU -> time max pool; returns pooled + caches."""
    b, c, s, t = z.shape
    if _HAVE_NUMBA:
        tp = t // pool
        mean = np.empty((b, groups))
        inv_std = np.empty((b, groups))
        _nb_group_stats(z, groups, GROUP_NORM_EPS, mean, inv_std)
        xhat = np.empty_like(z)
        pooled = np.empty((b, c, s, tp))
        arg = np.empty((b, c, s, tp), dtype=np.int64)
        _nb_tail_forward(
            z, mean, inv_std, scale, shift, slope, pool, groups, xhat, pooled, arg
        )
        return pooled, (xhat, inv_std, arg)
    y, xhat, inv_std = _group_norm_forward(z, scale, shift, groups)
    act = np.where(y >= 0, y, slope * y)
    pooled, arg = _time_pool_forward(act, pool)
    return pooled, (xhat, inv_std, arg)


def _stage_tail_backward(dpooled, cache, scale, shift, slope, pool, groups):
    """Backward of the fused stage tail; returns (dz, d_scale, d_shift)."""
    xhat, inv_std, arg = cache
    if _HAVE_NUMBA:
        b, c = xhat.shape[:2]
        dy = np.zeros_like(xhat)
        dsc_part = np.empty((b, c))
        dsh_part = np.empty((b, c))
        _nb_tail_backward_dy(
            np.ascontiguousarray(dpooled), xhat, scale, shift, slope, arg, dy, dsc_part, dsh_part
        )
        dz = np.empty_like(xhat)
        _nb_tail_backward_dz(dy, xhat, inv_std, scale, groups, dz)
        return dz, dsc_part.sum(axis=0), dsh_part.sum(axis=0)
    y = scale[None, :, None, None] * xhat + shift[None, :, None, None]
    da = _time_pool_backward(dpooled, pool, xhat.shape, arg)
    dy = np.where(y >= 0, da, slope * da)
    return _group_norm_backward(dy, xhat, inv_std, scale, groups)


def _adaptive_bins(length: int, out: int) -> list[tuple[int, int]]:
    return [
        (i * length // out, -((-(i + 1) * length) // out)) for i in range(out)
    ]


def _adaptive_pool_forward(a, out_hw):
    b, c, s, t = a.shape
    oh, ow = out_hw
    sbins = _adaptive_bins(s, oh)
    tbins = _adaptive_bins(t, ow)
    out = np.empty((b, c, oh, ow))
    for i, (s0, s1) in enumerate(sbins):
        for j, (t0, t1) in enumerate(tbins):
            out[:, :, i, j] = a[:, :, s0:s1, t0:t1].mean(axis=(2, 3))
    return out, (sbins, tbins, a.shape)


def _adaptive_pool_backward(dout, cache):
    sbins, tbins, a_shape = cache
    da = np.zeros(a_shape)
    for i, (s0, s1) in enumerate(sbins):
        for j, (t0, t1) in enumerate(tbins):
            area = (s1 - s0) * (t1 - t0)
            da[:, :, s0:s1, t0:t1] += dout[:, :, i, j, None, None] / area
    return da


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------


def _standardize(batch: np.ndarray, stats: NormStats) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    return (x - stats.mean[None, :, None]) / stats.std[None, :, None]


def _check_input(config: ModelConfig, batch: np.ndarray, stats: NormStats):
    if batch.ndim != 3:
        raise ConfigError(f"expected (batch, sensors, time) input, got {batch.shape}")
    if batch.shape[1] != config.in_sensors:
        raise ConfigError(
            f"window has {batch.shape[1]} sensors, model expects {config.in_sensors}"
        )
    if len(stats.mean) != config.in_sensors:
        raise ConfigError("NormStats sensor count does not match model config")
    need = min_input_length(config)
    if batch.shape[2] < need:
        raise ConfigError(
            f"window of {batch.shape[2]} time samples is below the minimum "
            f"{need} required by the stage geometry"
        )


def _forward_chunk(views, config: ModelConfig, x: np.ndarray, keep_cache: bool):
    """Run one standardized chunk (B, 1, S, T); optionally keep caches."""
    cache = [] if keep_cache else None
    a = x
    for i in range(len(config.stage_channels)):
        w = views[f"conv{i}.weight"]
        z, xp = _conv_forward(a, w, views[f"conv{i}.bias"])
        if keep_cache and not np.all(np.isfinite(z)):
            raise NumericalError(f"non-finite values after conv stage {i}")
        pooled, tail = _stage_tail_forward(
            z,
            views[f"norm{i}.scale"],
            views[f"norm{i}.shift"],
            config.leaky_slope,
            config.stage_time_pool[i],
            config.norm_groups,
        )
        if keep_cache:
            cache.append({"xp": xp, "tail": tail})
        a = pooled
    pooled, adaptive_cache = _adaptive_pool_forward(a, config.adaptive_pool_out)
    b = pooled.shape[0]
    flat = pooled.reshape(b, -1)
    out = flat @ views["head.weight"].T + views["head.bias"]
    if keep_cache:
        return out, cache, adaptive_cache, flat
    return out


def _chunk_size(config: ModelConfig, n_t: int) -> int:
    """Batch chunk that keeps conv scratch under the memory budget."""
    kh, kw = config.kernel
    s = config.in_sensors
    per_sample = 0.0
    t = n_t
    c_in = 1
    for c_out, pool in zip(config.stage_channels, config.stage_time_pool):
        t_out = t - kw + 1
        acts = c_out * s * t_out
        per_sample += 8.0 * 6 * acts
        if not _HAVE_NUMBA:  # fallback path materializes patch matrices
            per_sample += 8.0 * 2 * s * t_out * c_in * kh * kw
        t = t_out // pool if pool > 1 else t_out
        c_in = c_out
    return max(1, min(256, int(_CHUNK_BYTES / max(per_sample, 1.0))))


def forward_batch(state: ModelState, stats: NormStats, batch: np.ndarray) -> np.ndarray:
    """Evaluate a (B, sensors, time) batch; returns (B, k)."""
    batch = np.asarray(batch)
    _check_input(state.config, batch, stats)
    views = state.params()
    out = np.empty((batch.shape[0], state.config.head_out))
    step = _chunk_size(state.config, batch.shape[2])
    for lo in range(0, batch.shape[0], step):
        x = _standardize(batch[lo : lo + step], stats)[:, None, :, :]
        out[lo : lo + x.shape[0]] = _forward_chunk(views, state.config, x, False)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite network output")
    return out


def forward(state: ModelState, stats: NormStats, window: np.ndarray) -> np.ndarray:
    """Evaluate a single (sensors, time) window; returns shape (k,)."""
    window = np.asarray(window)
    if window.ndim != 2:
        raise ConfigError(f"expected a (sensors, time) window, got {window.shape}")
    return forward_batch(state, stats, window[None])[0]


def backward(
    state: ModelState,
    stats: NormStats,
    batch: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean-squared-error loss and its exact gradient w.r.t. theta.

    loss = mean over batch and output components of (pred - target)^2.
    """
    batch = np.asarray(batch)
    targets = np.asarray(targets, dtype=np.float64)
    _check_input(state.config, batch, stats)
    n = batch.shape[0]
    k = state.config.head_out
    if n == 0:
        raise ConfigError("backward requires a nonempty batch")
    if targets.shape != (n, k):
        raise ConfigError(f"targets shape {targets.shape} != ({n}, {k})")

    config = state.config
    views = state.params()
    grad = np.zeros_like(state.theta)
    gviews = _views(grad, config)
    loss_sum = 0.0
    step = _chunk_size(config, batch.shape[2])
    for lo in range(0, n, step):
        x = _standardize(batch[lo : lo + step], stats)[:, None, :, :]
        tgt = targets[lo : lo + x.shape[0]]
        out, cache, adaptive_cache, flat = _forward_chunk(views, config, x, True)
        resid = out - tgt
        if not np.all(np.isfinite(resid)):
            raise NumericalError("non-finite values at the network output")
        loss_sum += float(np.sum(resid * resid))
        dout = 2.0 * resid / (n * k)

        gviews["head.weight"] += dout.T @ flat
        gviews["head.bias"] += dout.sum(axis=0)
        dflat = dout @ views["head.weight"]
        dpool = dflat.reshape(
            x.shape[0], config.stage_channels[-1], *config.adaptive_pool_out
        )
        da = _adaptive_pool_backward(dpool, adaptive_cache)
        for i in reversed(range(len(config.stage_channels))):
            st = cache[i]
            dz, d_scale, d_shift = _stage_tail_backward(
                da,
                st["tail"],
                views[f"norm{i}.scale"],
                views[f"norm{i}.shift"],
                config.leaky_slope,
                config.stage_time_pool[i],
                config.norm_groups,
            )
            # The input gradient of stage 0 is the data gradient; skip it.
            da, d_w, d_b = _conv_backward(
                dz, st["xp"], views[f"conv{i}.weight"], need_dx=i > 0
            )
            gviews[f"conv{i}.weight"] += d_w
            gviews[f"conv{i}.bias"] += d_b
            gviews[f"norm{i}.scale"] += d_scale
            gviews[f"norm{i}.shift"] += d_shift
    return loss_sum / (n * k), grad


# ---------------------------------------------------------------------------
# Checkpoint file: magic "VSCK", version, config JSON, NormStats, theta,
# trailing CRC-32 over every preceding byte.
# ---------------------------------------------------------------------------


def save_checkpoint(state: ModelState, stats: NormStats, path) -> None:
    config_blob = json.dumps(
        {
            "in_sensors": state.config.in_sensors,
            "stage_channels": list(state.config.stage_channels),
            "kernel": list(state.config.kernel),
            "stage_time_pool": list(state.config.stage_time_pool),
            "norm_groups": state.config.norm_groups,
            "leaky_slope": state.config.leaky_slope,
            "adaptive_pool_out": list(state.config.adaptive_pool_out),
            "head_out": state.config.head_out,
        },
        sort_keys=True,
    ).encode("utf-8")
    chunks = [
        _CKPT_MAGIC,
        np.array(_CKPT_VERSION, "<u4").tobytes(),
        np.array(len(config_blob), "<u4").tobytes(),
        config_blob,
        np.array(len(stats.mean), "<u4").tobytes(),
        np.ascontiguousarray(stats.mean, "<f8").tobytes(),
        np.ascontiguousarray(stats.std, "<f8").tobytes(),
        np.array(len(state.theta), "<u8").tobytes(),
        np.ascontiguousarray(state.theta, "<f8").tobytes(),
    ]
    crc = 0
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)
            crc = zlib.crc32(chunk, crc)
        fh.write(np.array(crc & 0xFFFFFFFF, "<u4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelState, NormStats]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise DataError(f"checkpoint {path} too short ({len(blob)} bytes)")
    if blob[:4] != _CKPT_MAGIC:
        raise DataError(f"bad checkpoint magic {blob[:4]!r} at offset 0")
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != int(np.frombuffer(blob, "<u4", 1, len(blob) - 4)[0]):
        raise DataError(f"CRC mismatch in checkpoint {path}")
    version = int(np.frombuffer(blob, "<u4", 1, 4)[0])
    if version != _CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    cfg_len = int(np.frombuffer(blob, "<u4", 1, 8)[0])
    offset = 12
    try:
        cfg = json.loads(blob[offset : offset + cfg_len].decode("utf-8"))
        config = ModelConfig(
            in_sensors=cfg["in_sensors"],
            stage_channels=tuple(cfg["stage_channels"]),
            kernel=tuple(cfg["kernel"]),
            stage_time_pool=tuple(cfg["stage_time_pool"]),
            norm_groups=cfg["norm_groups"],
            leaky_slope=cfg["leaky_slope"],
            adaptive_pool_out=tuple(cfg["adaptive_pool_out"]),
            head_out=cfg["head_out"],
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed checkpoint config: {exc}") from exc
    offset += cfg_len
    n_sensors = int(np.frombuffer(blob, "<u4", 1, offset)[0])
    offset += 4
    mean = np.frombuffer(blob, "<f8", n_sensors, offset).copy()
    offset += 8 * n_sensors
    std = np.frombuffer(blob, "<f8", n_sensors, offset).copy()
    offset += 8 * n_sensors
    theta_len = int(np.frombuffer(blob, "<u8", 1, offset)[0])
    offset += 8
    expected_end = offset + 8 * theta_len + 4
    if expected_end != len(blob):
        raise DataError(
            f"truncated checkpoint: expected {expected_end} bytes, got {len(blob)}"
        )
    theta = np.frombuffer(blob, "<f8", theta_len, offset).copy()
    return ModelState(config=config, theta=theta), NormStats(mean=mean, std=std)
