"""Differentiable 1-D primitives with hand-derived backward passes.

Every feature map is a numpy array shaped ``(batch, channels, time)``. Forward
functions are pure except :func:`batchnorm_forward`, which updates the running
statistics held by its parameter object in Train mode. Backward functions take
the forward inputs again (plus whatever small extra state the op needs) and
return gradients in the same dtype as the input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError


class OpMode(enum.Enum):
    TRAIN = "train"
    INFER = "infer"


def _check_map(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 3:
        raise StructuralError(f"{name} must be (batch, channels, time), got shape {x.shape}")
    if min(x.shape) < 1:
        raise StructuralError(f"{name} has an empty dimension: {x.shape}")


# --------------------------------------------------------------------------- #
# Dilated convolution
# --------------------------------------------------------------------------- #


@dataclass
class ConvParams:
    kernel: np.ndarray  # (C_out, C_in, k)
    bias: np.ndarray  # (C_out,)
    dilation: int = 1

    def __post_init__(self):
        if self.kernel.ndim != 3:
            raise StructuralError(f"kernel must be (C_out, C_in, k), got {self.kernel.shape}")
        if self.kernel.shape[2] % 2 == 0:
            raise StructuralError(f"kernel_size must be odd, got {self.kernel.shape[2]}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise StructuralError(
                f"bias shape {self.bias.shape} does not match C_out={self.kernel.shape[0]}"
            )
        if int(self.dilation) != self.dilation or self.dilation < 1:
            raise ConfigError(f"dilation must be a positive integer, got {self.dilation}")

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]


def _im2col(x: np.ndarray, k: int, d: int) -> np.ndarray:
    """Stack the k dilated taps of a zero-padded signal: (B, C, T) -> (B, C*k, T)."""
    B, C, T = x.shape
    pad = d * (k // 2)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = np.empty((B, C, k, T), dtype=x.dtype)
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j * d : j * d + T]
    return cols.reshape(B, C * k, T)


def conv1d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Same-length dilated cross-correlation with zero padding.

    ``out[b, c, n] = bias[c] + sum_ci sum_j x[b, ci, n + d*j] * kernel[c, ci, j + k//2]``
    for ``j`` in ``-k//2 .. k//2``; taps outside the signal read zero.
    """
    _check_map(x)
    if x.shape[1] != p.in_channels:
        raise StructuralError(
            f"input has {x.shape[1]} channels, kernel expects {p.in_channels}"
        )
    cols = _im2col(x, p.kernel_size, p.dilation)
    w = p.kernel.reshape(p.out_channels, -1)
    out = np.matmul(w, cols)
    out += p.bias[None, :, None]
    return out


def conv1d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Return ``(grad_x, grad_kernel, grad_bias)`` for :func:`conv1d_forward`."""
    _check_map(x)
    B, C, T = x.shape
    if grad_out.shape != (B, p.out_channels, T):
        raise StructuralError(
            f"grad_out shape {grad_out.shape} != forward output shape {(B, p.out_channels, T)}"
        )
    k, d = p.kernel_size, p.dilation
    cols = _im2col(x, k, d)
    grad_kernel = np.tensordot(grad_out, cols, axes=([0, 2], [0, 2])).reshape(p.kernel.shape)
    grad_bias = grad_out.sum(axis=(0, 2))

    w = p.kernel.reshape(p.out_channels, -1)
    grad_cols = np.matmul(w.T, grad_out).reshape(B, C, k, T)
    pad = d * (k // 2)
    grad_xp = np.zeros((B, C, T + 2 * pad), dtype=grad_out.dtype)
    for j in range(k):
        grad_xp[:, :, j * d : j * d + T] += grad_cols[:, :, j, :]
    grad_x = grad_xp[:, :, pad : pad + T] if pad else grad_xp
    return grad_x, grad_kernel.astype(p.kernel.dtype, copy=False), grad_bias


# --------------------------------------------------------------------------- #
# Batch normalization
# --------------------------------------------------------------------------- #


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.99

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in (0, 1), got {self.momentum}")
        n = self.gamma.shape
        if not (self.beta.shape == self.running_mean.shape == self.running_var.shape == n):
            raise StructuralError("gamma, beta and running statistics must share one shape")

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, epsilon=1e-5, momentum=0.99):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )


def _bn_stats(x):
    mean = x.mean(axis=(0, 2))
    var = ((x - mean[None, :, None]) ** 2).mean(axis=(0, 2))
    return mean, var


def batchnorm_forward(x: np.ndarray, p: BatchNormParams, mode: OpMode) -> np.ndarray:
    """Per-channel normalization over batch and time.

    Train mode normalizes with the (biased) batch statistics and folds them
    into the running estimates; Infer mode uses the running estimates only.
    """
    _check_map(x)
    if x.shape[1] != p.gamma.shape[0]:
        raise StructuralError(f"input has {x.shape[1]} channels, BN has {p.gamma.shape[0]}")
    if mode is OpMode.TRAIN:
        mean, var = _bn_stats(x)
        m = p.momentum
        p.running_mean = (m * p.running_mean + (1 - m) * mean).astype(p.running_mean.dtype)
        p.running_var = (m * p.running_var + (1 - m) * var).astype(p.running_var.dtype)
    else:
        mean, var = p.running_mean, p.running_var
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    scale = (p.gamma * inv_std).astype(x.dtype)
    shift = (p.beta - mean * p.gamma * inv_std).astype(x.dtype)
    return x * scale[None, :, None] + shift[None, :, None]


def batchnorm_backward(x: np.ndarray, p: BatchNormParams, grad_out: np.ndarray):
    """Gradients of the Train-mode transform: ``(grad_x, grad_gamma, grad_beta)``.

    Batch statistics are recomputed from ``x``; their dependence on ``x`` is
    included.
    """
    if grad_out.shape != x.shape:
        raise StructuralError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    n = x.shape[0] * x.shape[2]
    mean, var = _bn_stats(x)
    inv_std = (1.0 / np.sqrt(var + p.epsilon)).astype(x.dtype)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]

    grad_beta = grad_out.sum(axis=(0, 2))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2))
    # d xhat -> d x through mean and variance
    g = grad_out * p.gamma[None, :, None].astype(x.dtype)
    g_sum = g.sum(axis=(0, 2))[None, :, None]
    gx_sum = (g * xhat).sum(axis=(0, 2))[None, :, None]
    grad_x = (inv_std[None, :, None] / n) * (n * g - g_sum - xhat * gx_sum)
    return grad_x, grad_gamma, grad_beta


# --------------------------------------------------------------------------- #
# Activations and noise
# --------------------------------------------------------------------------- #


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"leaky ReLU slope must lie in [0, 1], got {alpha}")


def leaky_relu(x: np.ndarray, alpha: float = 0.01) -> np.ndarray:
    _check_alpha(alpha)
    return np.where(x >= 0, x, x * x.dtype.type(alpha))


def leaky_relu_backward(x: np.ndarray, alpha: float, grad_out: np.ndarray) -> np.ndarray:
    # slope 1 at x == 0
    _check_alpha(alpha)
    return np.where(x >= 0, grad_out, grad_out * grad_out.dtype.type(alpha))


def logistic_sigmoid(x: np.ndarray) -> np.ndarray:
    """``1 / (1 + exp(-x))`` evaluated without overflow for large ``|x|``."""
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def logistic_sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward given the forward *output* ``y``."""
    return grad_out * y * (1 - y)


def gaussian_noise(
    x: np.ndarray, sigma: float, mode: OpMode, rng: np.random.Generator | None
) -> np.ndarray:
    """Additive N(0, sigma^2) noise in Train mode, identity in Infer mode.

    The backward pass is the identity, so there is no separate function.
    """
    if sigma < 0:
        raise ConfigError(f"noise sigma must be non-negative, got {sigma}")
    if mode is OpMode.INFER or sigma == 0:
        return x
    if rng is None:
        raise ConfigError("Train-mode noise needs an explicit random generator")
    z = rng.standard_normal(size=x.shape)
    return x + (sigma * z).astype(x.dtype)


# --------------------------------------------------------------------------- #
# Resampling and wiring
# --------------------------------------------------------------------------- #


def max_pool(x: np.ndarray, factor: int):
    """Non-overlapping max pooling. Returns ``(out, argmax)``; ties go to the first sample."""
    _check_map(x)
    if factor < 1:
        raise ConfigError(f"pool factor must be >= 1, got {factor}")
    B, C, T = x.shape
    if T % factor:
        raise StructuralError(f"time length {T} is not divisible by pool factor {factor}")
    windows = x.reshape(B, C, T // factor, factor)
    idx = windows.argmax(axis=3)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return out, idx


def max_pool_backward(grad_out: np.ndarray, idx: np.ndarray, factor: int) -> np.ndarray:
    B, C, Tp = grad_out.shape
    grad = np.zeros((B, C, Tp, factor), dtype=grad_out.dtype)
    np.put_along_axis(grad, idx[..., None], grad_out[..., None], axis=3)
    return grad.reshape(B, C, Tp * factor)


def unpool_forward_fill(x: np.ndarray, factor: int) -> np.ndarray:
    """Repeat every sample ``factor`` times along time."""
    if factor < 1:
        raise ConfigError(f"unpool factor must be >= 1, got {factor}")
    return np.repeat(x, factor, axis=-1) if factor > 1 else x


def unpool_forward_fill_backward(grad_out: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return grad_out
    B, C, T = grad_out.shape
    return grad_out.reshape(B, C, T // factor, factor).sum(axis=3)


def concat_channels(*maps: np.ndarray) -> np.ndarray:
    if not maps:
        raise StructuralError("nothing to concatenate")
    for m in maps:
        _check_map(m)
    B, _, T = maps[0].shape
    for m in maps[1:]:
        if m.shape[0] != B or m.shape[2] != T:
            raise StructuralError(
                f"cannot concatenate {maps[0].shape} with {m.shape}: batch/time differ"
            )
    return np.concatenate(maps, axis=1)


def concat_channels_backward(grad_out: np.ndarray, channel_counts) -> list[np.ndarray]:
    """Split ``grad_out`` back into the original channel ranges."""
    bounds = np.cumsum(channel_counts)[:-1]
    return np.split(grad_out, bounds, axis=1)


def add_elementwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # gradient of a + b is grad_out for both operands
    if a.shape != b.shape:
        raise StructuralError(f"cannot add maps of shape {a.shape} and {b.shape}")
    return a + b
