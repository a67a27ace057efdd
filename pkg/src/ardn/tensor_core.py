"""Dense (n, c, h, w) tensors and 3x3 zero-padded convolution.

Tensors are plain C-contiguous numpy arrays of rank 4.  The convolution hot
loop runs in the compiled ``_conv_ext`` module when it was built, otherwise in
the numpy fallback ``_conv_py``; ``ARDN_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _conv_py

try:
    from . import _conv_ext
except ImportError:  # extension not built
    _conv_ext = None

_BACKENDS = {"python": _conv_py}
if _conv_ext is not None:
    _BACKENDS["compiled"] = _conv_ext

BACKEND = "compiled" if _conv_ext is not None and os.environ.get("ARDN_BACKEND") != "python" else "python"
_kernels = _BACKENDS[BACKEND]


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    """Select the convolution backend (``"compiled"`` or ``"python"``)."""
    global BACKEND, _kernels
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    BACKEND = name
    _kernels = _BACKENDS[name]


def check_tensor4(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ContractError(f"{name} must be a rank-4 array, got {getattr(x, 'shape', type(x))}")
    if min(x.shape) < 1:
        raise ContractError(f"{name} has an empty dimension: {x.shape}")
    return x


def check_finite(x: np.ndarray, name: str = "tensor") -> None:
    if not np.isfinite(x).all():
        raise ContractError(f"{name} contains non-finite values")


@dataclass
class ConvParams:
    """Weights ``(out, in, 3, 3)`` and bias ``(out,)`` of one conv layer."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2:] != (3, 3):
            raise ContractError(f"conv weights must be (out, in, 3, 3), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ContractError(f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} filters")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


def _prep(x, dtype):
    return np.ascontiguousarray(x, dtype=dtype)


def conv2d_forward(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Same-size 3x3 convolution with one pixel of zero padding.

    ``out[b, o, y, x] = bias[o] + sum_{i, dy, dx} w[o, i, dy, dx] * xpad[b, i, y + dy, x + dx]``
    """
    check_tensor4(x, "input")
    if x.shape[1] != params.in_channels:
        raise ContractError(f"input has {x.shape[1]} channels, conv expects {params.in_channels}")
    check_finite(x, "conv input")
    dt = np.result_type(x.dtype, params.weights.dtype)
    return _kernels.conv3x3_forward(_prep(x, dt), _prep(params.weights, dt), _prep(params.bias, dt))


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, params: ConvParams, need_input: bool = True):
    """Gradients of ``sum(grad_out * conv2d_forward(x, params))``.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None
    when ``need_input`` is false (first layer during training).
    """
    check_tensor4(x, "input")
    expected = (x.shape[0], params.out_channels, x.shape[2], x.shape[3])
    if grad_out.shape != expected:
        raise ContractError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    if x.shape[1] != params.in_channels:
        raise ContractError(f"input has {x.shape[1]} channels, conv expects {params.in_channels}")
    dt = np.result_type(x.dtype, params.weights.dtype)
    return _kernels.conv3x3_backward(_prep(grad_out, dt), _prep(x, dt), _prep(params.weights, dt), need_input)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (evaluated in float64)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ContractError(f"non-finite function value at element {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
