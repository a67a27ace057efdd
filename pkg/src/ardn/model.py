"""Attention-residual denoising network.

Each of the ``k`` conv layers emits ``filters`` channels.  The last two are
tapped before any normalisation or nonlinearity: channel ``trunk`` is the
layer's residual (noise) map R_i and channel ``trunk + 1`` its attention
feature F_i.  The remaining ``trunk`` channels go through batch norm (on
every ``bn_every``-th layer except the last) and ReLU and feed the next layer.

The noise estimate is an attention-weighted average of the residual maps::

    S = sigmoid(F)
    A = softmax over depth of S          (per pixel, sums to 1 over i)
    E = sum_i A_i * R_i
    denoised = noisy - E
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .nn_layers import (
    BatchNormState,
    Mode,
    batchnorm_backward,
    batchnorm_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
)
from .tensor_core import ContractError, ConvParams, check_tensor4, conv2d_backward, conv2d_forward


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 20
    filters: int = 64
    trunk_channels: int = 62
    bn_every: int = 3
    input_channels: int = 1

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.trunk_channels < 1:
            raise ValueError("trunk_channels must be >= 1")
        if self.filters != self.trunk_channels + 2:
            raise ValueError(
                f"filters ({self.filters}) must equal trunk_channels + 2 ({self.trunk_channels + 2})"
            )
        if self.bn_every < 1 or self.input_channels < 1:
            raise ValueError("bn_every and input_channels must be >= 1")

    @classmethod
    def reduced(cls, num_layers: int, filters: int, **kw) -> "ModelConfig":
        return cls(num_layers=num_layers, filters=filters, trunk_channels=filters - 2, **kw)

    @property
    def bn_layers(self) -> tuple[int, ...]:
        """1-based indices of layers followed by batch norm."""
        k = self.num_layers
        return tuple(i for i in range(1, k + 1) if i % self.bn_every == 0 and i < k)

    @property
    def residual_channel(self) -> int:
        return self.trunk_channels

    @property
    def attention_channel(self) -> int:
        return self.trunk_channels + 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    config: ModelConfig
    convs: list[ConvParams]
    bns: dict[int, BatchNormState] = field(default_factory=dict)

    @property
    def dtype(self):
        return self.convs[0].weights.dtype

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed by stable names, in a fixed order."""
        out = {}
        for i, conv in enumerate(self.convs, start=1):
            out[f"conv{i}.weight"] = conv.weights
            out[f"conv{i}.bias"] = conv.bias
        for i in sorted(self.bns):
            out[f"bn{i}.gamma"] = self.bns[i].gamma
            out[f"bn{i}.beta"] = self.bns[i].beta
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i in sorted(self.bns):
            out[f"bn{i}.running_mean"] = self.bns[i].running_mean
            out[f"bn{i}.running_var"] = self.bns[i].running_var
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        m = self.copy()
        m.convs = [ConvParams(c.weights.astype(dtype), c.bias.astype(dtype)) for c in m.convs]
        for bn in m.bns.values():
            for attr in ("gamma", "beta", "running_mean", "running_var"):
                setattr(bn, attr, getattr(bn, attr).astype(dtype))
        return m


def build_model(config: ModelConfig, init_seed: int = 0, dtype=np.float64) -> Model:
    """He-normal conv weights, zero biases, identity batch norm."""
    convs = []
    for i in range(1, config.num_layers + 1):
        cin = config.input_channels if i == 1 else config.trunk_channels
        shape = (config.filters, cin, 3, 3)
        std = np.sqrt(2.0 / (9 * cin))
        w = rng.normals(rng.derive(init_seed, i), int(np.prod(shape))) * std
        convs.append(ConvParams(w.reshape(shape).astype(dtype), np.zeros(config.filters, dtype=dtype)))
    bns = {i: BatchNormState.fresh(config.filters, dtype=dtype) for i in config.bn_layers}
    return Model(config, convs, bns)


def parameter_count(model: Model) -> int:
    """Trainable scalars: conv weights and biases, BN gamma and beta."""
    return int(sum(a.size for a in model.parameters().values()))


@dataclass
class _LayerCache:
    h_in: np.ndarray
    bn: object = None
    pre_relu: np.ndarray | None = None


def forward_taps(model: Model, noisy: np.ndarray, mode: Mode = Mode.EVAL):
    """Run the conv stack; returns ``(R, F), cache`` with R, F of shape (n, k, h, w)."""
    check_tensor4(noisy, "noisy")
    cfg = model.config
    if noisy.shape[1] != cfg.input_channels:
        raise ContractError(f"model expects {cfg.input_channels} input channels, got {noisy.shape[1]}")
    mode = Mode(mode)
    n, _, h, w = noisy.shape
    k, trunk = cfg.num_layers, cfg.trunk_channels
    dt = model.dtype
    R = np.empty((n, k, h, w), dtype=dt)
    F = np.empty((n, k, h, w), dtype=dt)
    caches = []
    x = np.ascontiguousarray(noisy, dtype=dt)
    for i, conv in enumerate(model.convs, start=1):
        z = conv2d_forward(x, conv)
        R[:, i - 1] = z[:, trunk]
        F[:, i - 1] = z[:, trunk + 1]
        lc = _LayerCache(h_in=x)
        if i < k:
            if i in model.bns:
                y, lc.bn = batchnorm_forward(z, model.bns[i], mode)
            else:
                y = z
            lc.pre_relu = y[:, :trunk]
            x = np.ascontiguousarray(relu(lc.pre_relu))
        caches.append(lc)
    return (R, F), caches


def backward_taps(model: Model, caches, grad_R: np.ndarray, grad_F: np.ndarray, need_input: bool = False):
    """Backpropagate tap gradients; returns ``(grads, grad_noisy)``.

    ``grads`` is keyed like :meth:`Model.parameters`.
    """
    cfg = model.config
    k, trunk = cfg.num_layers, cfg.trunk_channels
    grads: dict[str, np.ndarray] = {}
    dh = None
    for i in range(k, 0, -1):
        lc = caches[i - 1]
        n, _, h, w = lc.h_in.shape
        dz = np.zeros((n, cfg.filters, h, w), dtype=grad_R.dtype)
        if i < k:
            dy = np.zeros_like(dz)
            dy[:, :trunk] = relu_backward(dh, lc.pre_relu)
            if i in model.bns:
                dzb, ggam, gbet = batchnorm_backward(dy, lc.bn, model.bns[i])
                dz += dzb
                grads[f"bn{i}.gamma"] = ggam
                grads[f"bn{i}.beta"] = gbet
            else:
                dz += dy
        dz[:, trunk] += grad_R[:, i - 1]
        dz[:, trunk + 1] += grad_F[:, i - 1]
        dh, gw, gb = conv2d_backward(dz, lc.h_in, model.convs[i - 1], need_input=(i > 1 or need_input))
        grads[f"conv{i}.weight"] = gw
        grads[f"conv{i}.bias"] = gb
    ordered = {name: grads[name] for name in model.parameters()}
    return ordered, dh


def softmax_depth(S: np.ndarray) -> np.ndarray:
    """Softmax over axis 1, independently at every (batch, y, x)."""
    e = np.exp(S - S.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def attention_weights(F: np.ndarray) -> np.ndarray:
    """``A = softmax_depth(sigmoid(F))``; per-pixel weights over the k layers."""
    return softmax_depth(sigmoid(F))


def attention_backward(grad_A: np.ndarray, A: np.ndarray, S: np.ndarray) -> np.ndarray:
    dS = A * (grad_A - (grad_A * A).sum(axis=1, keepdims=True))
    return sigmoid_backward(dS, S)


def noise_expectation(A: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Attention-weighted sum of residual maps over depth; shape (n, 1, h, w)."""
    if A.shape != R.shape:
        raise ContractError(f"attention {A.shape} and residual {R.shape} shapes differ")
    return (A * R).sum(axis=1, keepdims=True)


@dataclass
class DenoiseCache:
    taps: list
    R: np.ndarray
    A: np.ndarray
    S: np.ndarray


def denoise_forward(model: Model, noisy: np.ndarray, mode: Mode = Mode.EVAL):
    """Full forward pass; returns ``(denoised, E, A, cache)``."""
    (R, F), taps = forward_taps(model, noisy, mode)
    S = sigmoid(F)
    A = softmax_depth(S)
    E = noise_expectation(A, R)
    denoised = np.asarray(noisy, dtype=E.dtype) - E
    return denoised, E, A, DenoiseCache(taps, R, A, S)


def denoise_backward(model: Model, grad_denoised: np.ndarray, cache: DenoiseCache, need_input: bool = False):
    """Gradients of a loss given its gradient w.r.t. the denoised output.

    With ``need_input`` the returned input gradient includes the direct
    ``noisy`` term of ``denoised = noisy - E``.
    """
    dE = -grad_denoised  # (n, 1, h, w)
    dR = dE * cache.A
    dA = dE * cache.R
    dF = attention_backward(dA, cache.A, cache.S)
    grads, dx = backward_taps(model, cache.taps, dR, dF, need_input=need_input)
    if need_input:
        dx = dx + grad_denoised
    return grads, dx


def denoise_patch(model: Model, noisy: np.ndarray, mode: Mode = Mode.EVAL):
    """Returns ``(denoised, E_R, A)`` for a batch of patches (unclamped)."""
    denoised, E, A, _ = denoise_forward(model, noisy, mode)
    return denoised, E, A


def _tile_starts(size: int, tile: int, overlap: int) -> list[int]:
    if size <= tile:
        return [0]
    step = tile - 2 * overlap
    starts = list(range(0, size - tile, step))
    starts.append(size - tile)
    return starts


def denoise_image(
    model: Model,
    image: np.ndarray,
    tile: int = 128,
    overlap: int = 20,
    clamp: bool = True,
    pad_mode: str = "reflect",
) -> np.ndarray:
    """Eval-mode denoising of a 2-D image in overlapping tiles.

    Each tile keeps only pixels at least ``overlap`` away from its edges,
    except along the borders of the (padded) image.  With ``overlap`` >= the
    receptive-field radius the result equals whole-image inference.

    ``pad_mode="reflect"`` mirrors ``overlap`` pixels around the image first,
    so edge pixels are computed from image-like context rather than the zero
    padding that masked training never scores; ``"zero"`` skips this.
    """
    if tile <= 2 * overlap:
        raise ValueError("tile must exceed 2 * overlap")
    if overlap < 20:
        raise ValueError("overlap must be at least 20 pixels")
    if pad_mode not in ("reflect", "zero"):
        raise ValueError(f"unknown pad_mode {pad_mode!r}")
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("denoise_image expects a 2-D grayscale image")
    pad = overlap if pad_mode == "reflect" else 0
    if pad:
        img = np.pad(img, pad, mode="reflect" if min(img.shape) > 1 else "edge")
    H, W = img.shape
    th, tw = min(tile, H), min(tile, W)
    out = np.empty((H, W), dtype=model.dtype)
    for y0 in _tile_starts(H, th, overlap):
        for x0 in _tile_starts(W, tw, overlap):
            patch = img[y0:y0 + th, x0:x0 + tw][None, None]
            den = denoise_patch(model, patch, Mode.EVAL)[0][0, 0]
            ky0 = 0 if y0 == 0 else overlap
            ky1 = th if y0 + th == H else th - overlap
            kx0 = 0 if x0 == 0 else overlap
            kx1 = tw if x0 + tw == W else tw - overlap
            out[y0 + ky0:y0 + ky1, x0 + kx0:x0 + kx1] = den[ky0:ky1, kx0:kx1]
    if pad:
        out = out[pad:H - pad, pad:W - pad]
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out
