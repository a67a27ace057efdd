"""Masked loss, Adam, plateau scheduler, checkpoints and the training loop."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .corruption import NoiseSpec
from .dataio import DEFAULT_BORDER, PATCH_SIZE, DatasetManifest, make_batch
from .model import Model, ModelConfig, build_model, denoise_backward, denoise_forward
from .nn_layers import BatchNormState, Mode
from .tensor_core import ConvParams, ContractError

log = logging.getLogger(__name__)


def masked_loss(clean: np.ndarray, denoised: np.ndarray, border: int = DEFAULT_BORDER):
    """Half squared error over the central region, averaged over the batch.

    Returns ``(loss, grad)`` with ``grad`` the derivative w.r.t. ``denoised``;
    pixels within ``border`` of a patch edge contribute nothing.
    """
    if clean.shape != denoised.shape:
        raise ContractError(f"shape mismatch {clean.shape} vs {denoised.shape}")
    h, w = clean.shape[-2:]
    if border < 0 or 2 * border >= min(h, w):
        raise ContractError(f"border {border} leaves no central region in a {h}x{w} patch")
    b = clean.shape[0]
    sl = (..., slice(border, h - border), slice(border, w - border))
    diff = np.zeros_like(denoised)
    diff[sl] = denoised[sl] - clean[sl]
    d64 = diff[sl].astype(np.float64)
    loss = 0.5 * float(np.sum(d64 * d64)) / b
    return loss, diff / b


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if params.keys() != grads.keys():
        raise ContractError("parameter and gradient names differ")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class SchedulerState:
    best_loss: float = math.inf
    epochs_since_improve: int = 0
    patience: int = 5
    factor: float = 0.1
    min_lr: float = 1e-6
    rel_threshold: float = 1e-3

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def scheduler_update(state: SchedulerState, epoch_loss: float, current_lr: float) -> float:
    """Reduce-on-plateau; returns the learning rate for the next epoch."""
    if not math.isfinite(epoch_loss):
        raise ValueError("epoch loss must be finite")
    if epoch_loss < state.best_loss * (1 - state.rel_threshold):
        state.best_loss = epoch_loss
        state.epochs_since_improve = 0
        return current_lr
    state.epochs_since_improve += 1
    if state.epochs_since_improve >= state.patience:
        state.epochs_since_improve = 0
        return max(current_lr * state.factor, state.min_lr)
    return current_lr


# ---------------------------------------------------------------------------
# checkpoints
#
#   b"ARDN" | u32 version | u32 len | JSON header (utf-8)
#   u32 tensor count | per tensor: u32 name len, name, u32 rank, u64 dims..., f32 data
#
# All integers and floats little-endian.

MAGIC = b"ARDN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Model
    adam: AdamState
    scheduler: SchedulerState
    meta: dict = field(default_factory=dict)


def _tensors(cp: Checkpoint) -> dict[str, np.ndarray]:
    out = dict(cp.model.state_arrays())
    for name in cp.model.parameters():
        if name in cp.adam.m:
            out[f"adam.m.{name}"] = cp.adam.m[name]
            out[f"adam.v.{name}"] = cp.adam.v[name]
    return out


def checkpoint_bytes(cp: Checkpoint) -> bytes:
    bn = next(iter(cp.model.bns.values()), None)
    header = {
        "config": cp.model.config.to_dict(),
        "dtype": np.dtype(cp.model.dtype).name,
        "bn": {"momentum": bn.momentum, "epsilon": bn.epsilon} if bn else None,
        "adam": {k: getattr(cp.adam, k) for k in ("lr", "beta1", "beta2", "eps", "step")},
        "scheduler": asdict(cp.scheduler),
        "meta": cp.meta,
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text]
    tensors = _tensors(cp)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(cp: Checkpoint, path) -> None:
    """Write atomically: a crash never leaves a half-written file at ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(cp))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not an ARDN checkpoint")
    version, hlen = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(r.take(hlen, "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt config block: {e}") from None
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I", "tensor name length")
        name = r.take(nlen, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<I", f"rank of {name}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        size = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")

    dtype = np.dtype(header["dtype"])
    config = ModelConfig(**header["config"])

    def get(name, shape):
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        arr = tensors[name]
        if arr.shape != shape:
            raise CheckpointError(f"tensor {name} has dims {arr.shape}, config implies {shape}")
        return arr.astype(dtype)

    convs = []
    for i in range(1, config.num_layers + 1):
        cin = config.input_channels if i == 1 else config.trunk_channels
        convs.append(ConvParams(get(f"conv{i}.weight", (config.filters, cin, 3, 3)),
                                get(f"conv{i}.bias", (config.filters,))))
    bns = {}
    bn_kw = header.get("bn") or {}
    for i in config.bn_layers:
        c = (config.filters,)
        bns[i] = BatchNormState(get(f"bn{i}.gamma", c), get(f"bn{i}.beta", c),
                                get(f"bn{i}.running_mean", c), get(f"bn{i}.running_var", c), **bn_kw)
    model = Model(config, convs, bns)
    adam = AdamState(**header["adam"])
    for name, p in model.parameters().items():
        if f"adam.m.{name}" in tensors:
            adam.m[name] = get(f"adam.m.{name}", p.shape)
            adam.v[name] = get(f"adam.v.{name}", p.shape)
    return Checkpoint(model, adam, SchedulerState(**header["scheduler"]), header.get("meta", {}))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_checkpoint(data)
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from None


def load_model(path) -> Model:
    return load_checkpoint(path).model


# ---------------------------------------------------------------------------
# training loop

_VAL = 0x56414C  # stream purpose for the validation batch


@dataclass
class TrainingReport:
    model: Model
    epoch_losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    val_psnr: list[float] = field(default_factory=list)
    iteration_losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def train_step(model: Model, adam: AdamState, clean: np.ndarray, noisy: np.ndarray, border: int) -> float:
    denoised, _, _, cache = denoise_forward(model, noisy, Mode.TRAIN)
    loss, grad = masked_loss(clean, denoised, border)
    grads, _ = denoise_backward(model, grad, cache)
    adam_step(model.parameters(), grads, adam)
    return loss


def validation_psnr(model: Model, manifest: DatasetManifest, spec: NoiseSpec, run_seed: int,
                    count: int = 8, patch_size: int = PATCH_SIZE, border: int = DEFAULT_BORDER) -> float:
    """Mean PSNR of clamped Eval-mode output on a fixed set of noisy patches."""
    from .evaluation import psnr

    batch = make_batch(manifest, count, spec, 0, rng.derive(run_seed, _VAL),
                       patch_size=patch_size, border=border, dtype=model.dtype, workers=1)
    denoised, _, _, _ = denoise_forward(model, batch.noisy, Mode.EVAL)
    denoised = np.clip(denoised, 0.0, 1.0)
    return float(np.mean([psnr(c[0], d[0]) for c, d in zip(batch.clean, denoised)]))


def _format_metric(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


def train(
    config: ModelConfig,
    manifest: DatasetManifest,
    spec: NoiseSpec,
    epochs: int,
    iters_per_epoch: int,
    batch_size: int,
    run_seed: int,
    checkpoint_dir=None,
    *,
    lr: float = 1e-3,
    dtype=np.float32,
    border: int = DEFAULT_BORDER,
    patch_size: int = PATCH_SIZE,
    val_manifest: DatasetManifest | None = None,
    scheduler: SchedulerState | None = None,
    resume: Checkpoint | None = None,
    workers: int | None = None,
) -> TrainingReport:
    """Train for ``epochs`` epochs (counting any epochs already in ``resume``).

    Iteration ``i`` of the whole run always sees batch ``i`` of the seeded
    stream, so resuming from an epoch checkpoint continues the same run.
    With ``checkpoint_dir`` a checkpoint ``epoch_NNNN.ardn`` and a row of
    ``metrics.csv`` are written after every epoch.
    """
    if resume is not None:
        model, adam, sched = resume.model.copy(), resume.adam, resume.scheduler
        adam = AdamState(adam.lr, adam.beta1, adam.beta2, adam.eps, adam.step,
                         {k: v.copy() for k, v in adam.m.items()}, {k: v.copy() for k, v in adam.v.items()})
        sched = SchedulerState(**asdict(sched))
        start = int(resume.meta.get("epoch", 0))
        if model.config != config:
            raise ValueError("resume checkpoint was trained with a different model config")
    else:
        model = build_model(config, rng.derive(run_seed, 0x494E4954), dtype=dtype)
        adam = AdamState(lr=lr)
        sched = scheduler or SchedulerState()
        start = 0
    val_manifest = val_manifest or manifest
    report = TrainingReport(model)
    out_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics = out_dir / "metrics.csv"
        if start == 0 or not metrics.exists():
            metrics.write_text("epoch,loss,lr,val_psnr\n")

    for epoch in range(start, epochs):
        epoch_lr = adam.lr
        losses = []
        for it in range(iters_per_epoch):
            batch = make_batch(manifest, batch_size, spec, epoch * iters_per_epoch + it, run_seed,
                               patch_size=patch_size, border=border, dtype=model.dtype, workers=workers)
            losses.append(train_step(model, adam, batch.clean, batch.noisy, border))
        epoch_loss = float(np.mean(losses))
        vpsnr = validation_psnr(model, val_manifest, spec, run_seed, patch_size=patch_size, border=border)
        adam.lr = scheduler_update(sched, epoch_loss, adam.lr)
        report.iteration_losses.extend(losses)
        report.epoch_losses.append(epoch_loss)
        report.lrs.append(epoch_lr)
        report.val_psnr.append(vpsnr)
        log.info("epoch %d  loss %.6g  lr %.3g  val_psnr %.3f dB", epoch + 1, epoch_loss, epoch_lr, vpsnr)
        if out_dir is not None:
            meta = {
                "epoch": epoch + 1,
                "iteration": (epoch + 1) * iters_per_epoch,
                "iters_per_epoch": iters_per_epoch,
                "batch_size": batch_size,
                "run_seed": run_seed,
                "noise": spec.to_dict(),
                "border": border,
                "patch_size": patch_size,
            }
            path = out_dir / f"epoch_{epoch + 1:04d}.ardn"
            save_checkpoint(Checkpoint(model, adam, sched, meta), path)
            report.checkpoints.append(path)
            with open(metrics, "a") as fh:
                fh.write(f"{epoch + 1},{epoch_loss:.9g},{epoch_lr:.9g},{_format_metric(vpsnr)}\n")
    return report


def latest_checkpoint(checkpoint_dir) -> Path | None:
    found = sorted(Path(checkpoint_dir).glob("epoch_*.ardn"))
    return found[-1] if found else None
