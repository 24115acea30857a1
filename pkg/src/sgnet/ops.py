"""Differentiable ops over (N,C,H,W) feature maps.

Each op validates shapes, computes the forward value with numpy or the
kernel backend, and registers a backward rule on the active tape. Backward
rules are closures over whatever forward intermediates they need; ops
called outside a tape block keep nothing.

Convolution runs as im2col + GEMM. The patch matrix has one row per
(n, oh, ow) output site and one column per (c, ky, kx) tap, channel
outermost, so a channel group occupies a contiguous column block and
grouped convolution reduces to block-diagonal GEMMs.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, UsageError
from .tensor import Tensor, record_op


def _as_pair(value, name):
    if isinstance(value, int):
        value = (value, value)
    value = tuple(int(v) for v in value)
    if len(value) != 2:
        raise ConfigurationError(f"{name} must be an int or a pair, got {value!r}")
    return value


@dataclass(frozen=True)
class ConvSpec:
    """Static shape contract for one convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_pair(self.kernel, "kernel"))
        object.__setattr__(self, "stride", _as_pair(self.stride, "stride"))
        object.__setattr__(self, "padding", _as_pair(self.padding, "padding"))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ConfigurationError(f"bad conv geometry {self.kernel}/{self.stride}/{self.padding}")
        if self.groups < 1:
            raise ConfigurationError("groups must be positive")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigurationError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def weight_shape(self):
        kh, kw = self.kernel
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def output_hw(self, h, w):
        """Spatial output size; rejects geometry that does not tile exactly."""
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        for size, k, s, p, axis in ((h, kh, sh, ph, "height"), (w, kw, sw, pw, "width")):
            span = size + 2 * p - k
            if span < 0:
                raise ConfigurationError(f"kernel exceeds padded input along {axis} ({size}+2*{p} < {k})")
            if span % s:
                raise ConfigurationError(
                    f"non-integer output {axis}: ({size} + 2*{p} - {k}) not divisible by stride {s}"
                )
        return kernels.conv_out_size(h, kh, sh, ph), kernels.conv_out_size(w, kw, sw, pw)


def _check_map(x, name="input"):
    if not isinstance(x, Tensor):
        raise UsageError(f"{name} must be a Tensor, got {type(x).__name__}")
    if x.ndim != 4:
        raise UsageError(f"{name} must be (N,C,H,W), got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias, spec: ConvSpec) -> Tensor:
    _check_map(x)
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ConfigurationError(f"conv expects {spec.in_channels} input channels, got {c}")
    if weight.shape != spec.weight_shape:
        raise ConfigurationError(f"weight shape {weight.shape} != {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ConfigurationError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    oh, ow = spec.output_hw(h, w)
    kh, kw = spec.kernel
    groups = spec.groups
    out_ch = spec.out_channels

    # compiled kernels take contiguous buffers; Tensor data may be a view
    cols = kernels.im2col(np.ascontiguousarray(x.data), kh, kw,
                          spec.stride[0], spec.stride[1],
                          spec.padding[0], spec.padding[1])
    rows = cols.shape[0]
    if groups == 1:
        w_mat = weight.data.reshape(out_ch, -1)
        out_mat = cols @ w_mat.T
    else:
        opg = out_ch // groups
        ksz = (c // groups) * kh * kw
        out_mat = np.empty((rows, out_ch), dtype=cols.dtype)
        for g in range(groups):
            w_mat = weight.data[g * opg:(g + 1) * opg].reshape(opg, ksz)
            out_mat[:, g * opg:(g + 1) * opg] = cols[:, g * ksz:(g + 1) * ksz] @ w_mat.T
    out = np.ascontiguousarray(out_mat.reshape(n, oh, ow, out_ch).transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)
    need_x = x.requires_grad
    need_w = weight.requires_grad
    x_shape = x.shape
    w_data = weight.data

    def rule(grad):
        g_mat = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(rows, out_ch)
        dw = np.empty(spec.weight_shape, dtype=grad.dtype) if need_w else None
        dcols = np.empty_like(cols) if need_x else None
        opg = out_ch // groups
        ksz = (x_shape[1] // groups) * kh * kw
        for g in range(groups):
            osl = slice(g * opg, (g + 1) * opg)
            csl = slice(g * ksz, (g + 1) * ksz)
            w_mat = w_data[osl].reshape(opg, ksz)
            if need_w:
                dw[osl] = (g_mat[:, osl].T @ cols[:, csl]).reshape(opg, x_shape[1] // groups, kh, kw)
            if need_x:
                dcols[:, csl] = g_mat[:, osl] @ w_mat
        dx = None
        if need_x:
            dx = kernels.col2im(dcols, x_shape, kh, kw,
                                spec.stride[0], spec.stride[1],
                                spec.padding[0], spec.padding[1])
        if bias is None:
            return dx, dw
        return dx, dw, g_mat.sum(axis=0)

    return record_op("conv2d", inputs, out, rule)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization; mutates running stats in train mode."""
    _check_map(x)
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(f"gamma/beta must be ({c},), got {gamma.shape}/{beta.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ConfigurationError("running stats do not match channel count")

    if training:
        m = n * h * w
        if m < 2:
            raise ConfigurationError("batchnorm training needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        diff = x.data - mu[None, :, None, None]
        var = np.mean(diff * diff, axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = diff * inv[None, :, None, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))

        def rule(grad):
            dbeta = grad.sum(axis=(0, 2, 3))
            dgamma = (grad * xhat).sum(axis=(0, 2, 3))
            dxhat = grad * gamma.data[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3))
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (inv[None, :, None, None] / m) * (m * dxhat
                                                   - s1[None, :, None, None]
                                                   - xhat * s2[None, :, None, None])
            return dx, dgamma, dbeta
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None, None]) * inv[None, :, None, None]

        def rule(grad):
            dbeta = grad.sum(axis=(0, 2, 3))
            dgamma = (grad * xhat).sum(axis=(0, 2, 3))
            dx = grad * (gamma.data * inv)[None, :, None, None]
            return dx, dgamma, dbeta

    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    return record_op("batchnorm2d", (x, gamma, beta), out, rule)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def rule(grad):
        return (grad * mask,)

    return record_op("relu", (x,), np.where(mask, x.data, 0.0), rule)


def maxpool2x2(x: Tensor) -> Tensor:
    _check_map(x)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ConfigurationError(f"maxpool2x2 needs even H and W, got {x.shape[2]}x{x.shape[3]}")
    out, idx = kernels.maxpool2x2_forward(np.ascontiguousarray(x.data))

    def rule(grad):
        return (kernels.maxpool2x2_backward(np.ascontiguousarray(grad), idx),)

    return record_op("maxpool2x2", (x,), out, rule)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad H and W edges; lets a stride-2 7x7 conv tile an even input
    exactly (symmetric padding cannot, since the span parity is odd)."""
    _check_map(x)
    if min(top, bottom, left, right) < 0:
        raise ConfigurationError("pad amounts must be non-negative")
    out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h, w = x.shape[2], x.shape[3]

    def rule(grad):
        return (grad[:, :, top:top + h, left:left + w],)

    return record_op("pad2d", (x,), out, rule)


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check_map(x)
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def rule(grad):
        return (grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return record_op("upsample_nearest2x", (x,), out, rule)


def concat_channels(parts) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise UsageError("concat_channels needs at least one tensor")
    for p in parts:
        _check_map(p, "concat input")
    base = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != base[0] or p.shape[2:] != base[2:]:
            raise ConfigurationError(f"concat shapes disagree: {base} vs {p.shape}")
    widths = [p.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def rule(grad):
        return tuple(grad[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return record_op("concat_channels", parts, np.concatenate([p.data for p in parts], axis=1), rule)


def _check_same_shape(a, b, name):
    if a.shape != b.shape:
        raise ConfigurationError(f"{name} shapes disagree: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def rule(grad):
        return grad, grad

    return record_op("add", (a, b), a.data + b.data, rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def rule(grad):
        return grad, -grad

    return record_op("sub", (a, b), a.data - b.data, rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def rule(grad):
        return grad * b.data, grad * a.data

    return record_op("mul", (a, b), a.data * b.data, rule)


def sigmoid(x: Tensor, strict_open: bool = False) -> Tensor:
    """Logistic function; strict_open clamps into the open interval (0,1).

    In float arithmetic sigmoid saturates to exactly 0.0 or 1.0 for large
    |x|; gate values must stay strictly inside (0,1) so the gated path never
    degenerates to a hard on/off switch.
    """
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    if strict_open:
        tiny = np.nextafter(x.data.dtype.type(0), x.data.dtype.type(1))
        big = np.nextafter(x.data.dtype.type(1), x.data.dtype.type(0))
        np.clip(out, tiny, big, out=out)

    def rule(grad):
        return (grad * out * (1.0 - out),)

    return record_op("sigmoid", (x,), out, rule)


def scale_channels(x: Tensor, alpha: Tensor) -> Tensor:
    """Multiply each channel of x by a per-channel (or single shared) factor."""
    _check_map(x)
    if alpha.ndim == 0 or alpha.shape == (1,):
        factor = alpha.data.reshape(())

        def rule(grad):
            return grad * factor, np.sum(grad * x.data).reshape(alpha.shape)
    elif alpha.shape == (x.shape[1],):
        factor = alpha.data[None, :, None, None]

        def rule(grad):
            return grad * factor, (grad * x.data).sum(axis=(0, 2, 3))
    else:
        raise ConfigurationError(
            f"alpha must be scalar or ({x.shape[1]},), got shape {alpha.shape}"
        )

    return record_op("scale_channels", (x, alpha), x.data * factor, rule)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def rule(grad):
        return (grad * factor,)

    return record_op("scale", (x,), x.data * factor, rule)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def rule(grad):
        return (np.broadcast_to(grad, shape).astype(grad.dtype, copy=True),)

    return record_op("sum_all", (x,), np.asarray(x.data.sum()), rule)
