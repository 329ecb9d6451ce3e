"""
Differentiable compute kernels.

Every operation the network uses comes as a forward function plus a matching
`*_backward` function that maps an upstream gradient onto each differentiable
input. The network module chains them by hand in a fixed order, there is no
tape. Tensors are plain float64 numpy arrays, leading axes are batch axes.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp, softmax

from .exceptions import (
    ConfigurationError,
    DimensionError,
    DomainError,
    LabelError,
    ParameterError,
)

VALID = "valid"
SAME = "same_zero_pad"
CONV_MODES = (VALID, SAME)

TRAIN = "train"
INFER = "infer"
INSTANCE = "instance"
NORM_MODES = (TRAIN, INFER, INSTANCE)

SQRT_EPS = 1e-8
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def as_tensor(x):
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class KernelGrad:
    """Gradients of one kernel call, one entry per differentiable input."""
    inputs_grad: tuple

    def __iter__(self):
        return iter(self.inputs_grad)

    def __getitem__(self, index):
        return self.inputs_grad[index]


def _check_finite(name, values):
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{name} produced non-finite values")
    return values


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


# convolution

def _pad_widths(length):
    left = (length - 1) // 2
    return left, length - 1 - left


def _pad(signal, length, mode):
    if mode == VALID:
        return signal
    left, right = _pad_widths(length)
    widths = [(0, 0)] * (signal.ndim - 1) + [(left, right)]
    return np.pad(signal, widths)


def _overlap_add(spread, padded_length):
    """Scatter per-window gradients (..., N, L) back onto the padded signal."""
    n_out, length = spread.shape[-2:]
    grad = np.zeros(spread.shape[:-2] + (padded_length,))
    for tap in range(length):
        grad[..., tap:tap + n_out] += spread[..., tap]
    return grad


def _check_conv(signal, kernel, mode):
    if mode not in CONV_MODES:
        raise ParameterError(f"unknown convolution mode {mode!r}")
    if kernel.ndim == 0 or kernel.shape[-1] < 1:
        raise DimensionError("kernel needs at least one tap")
    if signal.ndim == 0:
        raise DimensionError("signal must have a time axis")
    try:
        leading = np.broadcast_shapes(signal.shape[:-1], kernel.shape[:-1])
    except ValueError as exc:
        raise DimensionError(
            f"kernel rows {kernel.shape[:-1]} do not match signal rows {signal.shape[:-1]}"
        ) from exc
    if leading != signal.shape[:-1]:
        raise DimensionError(
            f"kernel rows {kernel.shape[:-1]} do not match signal rows {signal.shape[:-1]}"
        )
    if mode == VALID and signal.shape[-1] < kernel.shape[-1]:
        raise DimensionError(
            f"valid convolution needs T >= L, got T={signal.shape[-1]}, L={kernel.shape[-1]}"
        )


def conv1d(signal, kernel, mode=VALID):
    """
    Cross-correlate the last axis of `signal` (..., T) with `kernel`.

    `kernel` is either one row (L,) shared by every signal row, or depthwise
    rows (..., L) broadcastable against the signal's leading axes.
    Valid mode returns T-L+1 samples; same_zero_pad returns T samples with
    the kernel centred, so a centred unit impulse is the identity.
    """
    signal = as_tensor(signal)
    kernel = as_tensor(kernel)
    _check_conv(signal, kernel, mode)
    windows = sliding_window_view(_pad(signal, kernel.shape[-1], mode), kernel.shape[-1], axis=-1)
    return _check_finite("conv1d", np.einsum("...nl,...l->...n", windows, kernel))


def conv1d_backward(signal, kernel, upstream, mode=VALID):
    """Gradients of conv1d w.r.t. (signal, kernel)."""
    signal = as_tensor(signal)
    kernel = as_tensor(kernel)
    upstream = as_tensor(upstream)
    _check_conv(signal, kernel, mode)
    length = kernel.shape[-1]
    padded = _pad(signal, length, mode)
    windows = sliding_window_view(padded, length, axis=-1)
    if upstream.shape != windows.shape[:-1]:
        raise DimensionError(f"upstream shape {upstream.shape} != output shape {windows.shape[:-1]}")

    kernel_grad = _unbroadcast(np.einsum("...nl,...n->...l", windows, upstream), kernel.shape)
    padded_grad = _overlap_add(upstream[..., :, None] * kernel[..., None, :], padded.shape[-1])
    if mode == SAME:
        left, right = _pad_widths(length)
        padded_grad = padded_grad[..., left:padded_grad.shape[-1] - right]
    signal_grad = _unbroadcast(padded_grad, signal.shape)
    return KernelGrad((signal_grad, kernel_grad))


def filter_bank(signal, bank):
    """
    Valid convolution of every signal row (..., T) with every bank row (K, L).

    Returns (..., K, T-L+1). This is the FIRConv layer: one output plane per
    band-pass kernel.
    """
    signal = as_tensor(signal)
    bank = as_tensor(bank)
    if bank.ndim != 2:
        raise DimensionError(f"filter bank must be (K, L), got {bank.shape}")
    _check_conv(signal, bank[0], VALID)
    windows = sliding_window_view(signal, bank.shape[1], axis=-1)
    return _check_finite("filter_bank", np.einsum("...nl,kl->...kn", windows, bank))


def filter_bank_backward(bank, upstream, n_samples):
    """Gradient of filter_bank w.r.t. its signal; the bank itself is fixed."""
    bank = as_tensor(bank)
    upstream = as_tensor(upstream)
    if upstream.shape[-2] != bank.shape[0] or upstream.shape[-1] != n_samples - bank.shape[1] + 1:
        raise DimensionError(f"upstream shape {upstream.shape} does not match bank {bank.shape}")
    spread = np.einsum("...kn,kl->...nl", upstream, bank)
    return _overlap_add(spread, n_samples)


# dense algebra

def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite("matmul", np.matmul(a, b))


def matmul_backward(a, b, upstream):
    a = as_tensor(a)
    b = as_tensor(b)
    upstream = as_tensor(upstream)
    a_grad = _unbroadcast(np.matmul(upstream, np.swapaxes(b, -1, -2)), a.shape)
    b_grad = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), upstream), b.shape)
    return KernelGrad((a_grad, b_grad))


# elementwise

def square(x):
    x = as_tensor(x)
    return _check_finite("square", x * x)


def square_backward(x, upstream):
    return 2.0 * as_tensor(x) * as_tensor(upstream)


def sqrt_eps(x, eps=SQRT_EPS):
    """Elementwise sqrt(x + eps); eps keeps the gradient bounded at zero."""
    x = as_tensor(x)
    if np.any(x < -eps):
        raise DomainError(f"sqrt_eps input below -eps (min {x.min()})")
    return _check_finite("sqrt_eps", np.sqrt(np.maximum(x + eps, 0.0)))


def sqrt_eps_backward(x, upstream, eps=SQRT_EPS):
    return as_tensor(upstream) / (2.0 * np.sqrt(as_tensor(x) + eps))


# batch normalization

@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    n_updates: int = 0

    @classmethod
    def fresh(cls, channels, momentum=BN_MOMENTUM, eps=BN_EPS):
        return cls(np.zeros(channels), np.ones(channels), momentum, eps)

    def copy(self):
        return BatchNormState(
            self.running_mean.copy(), self.running_var.copy(),
            self.momentum, self.eps, self.n_updates,
        )


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    mode: str
    axes: tuple = field(default=(0, 2))


def batch_norm(x, gamma, beta, state, mode=TRAIN):
    """
    Normalize x (B, C, T) per channel.

    train: batch statistics over (batch, time), running stats updated with
    momentum. infer: running statistics. instance: each trial's own
    statistics over time, running stats untouched.
    Returns (y, cache); the cache feeds batch_norm_backward.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    if mode not in NORM_MODES:
        raise ParameterError(f"unknown normalization mode {mode!r}")
    if x.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batch_norm expects x (B, C, T) and gamma/beta (C,), got {x.shape}, {gamma.shape}, {beta.shape}"
        )

    if mode == TRAIN:
        if x.shape[0] < 2:
            raise ConfigurationError("batch_norm in train mode needs a batch of at least 2 trials")
        axes = (0, 2)
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        n = x.shape[0] * x.shape[2]
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean.ravel()
        state.running_var = (1 - m) * state.running_var + m * var.ravel() * n / (n - 1)
        state.n_updates += 1
    elif mode == INSTANCE:
        axes = (2,)
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
    else:
        axes = ()
        mean = state.running_mean[None, :, None]
        var = state.running_var[None, :, None]

    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x - mean) * inv_std
    y = gamma[None, :, None] * x_hat + beta[None, :, None]
    return _check_finite("batch_norm", y), BatchNormCache(x_hat, inv_std, mode, axes)


def batch_norm_backward(cache, gamma, upstream):
    """Gradients of batch_norm w.r.t. (x, gamma, beta)."""
    upstream = as_tensor(upstream)
    dx_hat = upstream * as_tensor(gamma)[None, :, None]
    if cache.mode == INFER:
        dx = dx_hat * cache.inv_std
    else:
        axes = cache.axes
        dx = cache.inv_std * (
            dx_hat
            - dx_hat.mean(axis=axes, keepdims=True)
            - cache.x_hat * (dx_hat * cache.x_hat).mean(axis=axes, keepdims=True)
        )
    gamma_grad = (upstream * cache.x_hat).sum(axis=(0, 2))
    beta_grad = upstream.sum(axis=(0, 2))
    return KernelGrad((dx, gamma_grad, beta_grad))


# loss

def softmax_cross_entropy(logits, label):
    """
    Cross-entropy of softmax(logits) against `label`, classes on axis 0.

    logits may be (K,) or (K, ...) with one column per trailing position;
    label is an int or an integer array broadcastable to logits.shape[1:].
    Returns (loss, grad) with grad = softmax - one_hot(label).
    """
    logits = as_tensor(logits)
    if logits.ndim == 0:
        raise DimensionError("logits need a class axis")
    labels = np.asarray(label)
    n_classes = logits.shape[0]
    if labels.dtype.kind not in "iu" or np.any((labels < 0) | (labels >= n_classes)):
        raise LabelError(f"label {label} outside [0, {n_classes})")
    labels = np.broadcast_to(labels, logits.shape[1:])[None, ...]

    loss = logsumexp(logits, axis=0) - np.take_along_axis(logits, labels, axis=0)[0]
    grad = softmax(logits, axis=0)
    np.put_along_axis(grad, labels, np.take_along_axis(grad, labels, axis=0) - 1.0, axis=0)
    if loss.ndim == 0:
        loss = float(loss)
    return loss, grad
