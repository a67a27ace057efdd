"""Batch normalisation, ReLU and sigmoid, each with an explicit backward pass."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor_core import ContractError, check_tensor4


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics.

    ``running_mean``/``running_var`` are updated in place by Train-mode
    forward calls as ``running = (1 - momentum) * running + momentum * batch``.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.momentum <= 1:
            raise ValueError("momentum must lie in (0, 1]")

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64, **kw) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            **kw,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class BatchNormCache:
    mode: Mode
    xhat: np.ndarray
    inv_std: np.ndarray  # (c,)


def batchnorm_forward(x: np.ndarray, state: BatchNormState, mode: Mode = Mode.TRAIN):
    check_tensor4(x, "batchnorm input")
    n, c, h, w = x.shape
    if c != state.channels:
        raise ContractError(f"batchnorm has {state.channels} channels, input has {c}")
    mode = Mode(mode)
    if mode is Mode.TRAIN:
        count = n * h * w
        if count == 1:
            raise ContractError("batch variance undefined for a single value per channel")
        mean = x.mean(axis=(0, 2, 3))
        centred = x - mean[None, :, None, None]
        var = (centred * centred).mean(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * var
    else:
        mean, var = state.running_mean, state.running_var
        centred = x - mean[None, :, None, None]
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = centred * inv_std[None, :, None, None]
    out = state.gamma[None, :, None, None] * xhat + state.beta[None, :, None, None]
    return out.astype(x.dtype, copy=False), BatchNormCache(mode, xhat, inv_std)


def batchnorm_backward(grad_out: np.ndarray, cache: BatchNormCache, state: BatchNormState):
    """Returns ``(grad_input, grad_gamma, grad_beta)``.

    Train-mode caches differentiate through the batch mean and variance;
    Eval-mode caches give the plain affine gradient.
    """
    if not isinstance(cache, BatchNormCache):
        raise ContractError("batchnorm_backward needs the cache from batchnorm_forward")
    if grad_out.shape != cache.xhat.shape:
        raise ContractError(f"grad_out shape {grad_out.shape} != cached shape {cache.xhat.shape}")
    xhat = cache.xhat
    axes = (0, 2, 3)
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    g = state.gamma[None, :, None, None]
    scale = (g * cache.inv_std[None, :, None, None])
    if cache.mode is Mode.EVAL:
        return grad_out * scale, grad_gamma, grad_beta
    n, _, h, w = grad_out.shape
    count = n * h * w
    dx = scale / count * (
        count * grad_out
        - grad_beta[None, :, None, None]
        - xhat * grad_gamma[None, :, None, None]
    )
    return dx.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, overflow-free for any finite input."""
    out = np.empty_like(x)
    pos = x >= 0
    with np.errstate(under="ignore"):  # exp of a large negative is exactly 0 here
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    return grad_out * out * (1 - out)
