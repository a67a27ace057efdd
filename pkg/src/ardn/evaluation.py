"""PSNR, dataset evaluation over noise grids, and attention heat maps."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .corruption import corrupt
from .dataio import DatasetManifest, encode_pgm
from .model import Model, denoise_forward, denoise_image
from .nn_layers import Mode

# Published BSD68/Set12/Kodak24/Urban100 PSNR (dB) of ARCNN and FARCNN, for
# side-by-side display only.  Keyed (method, family, dataset) -> {level: dB}.
REFERENCE_PSNR = {
    ("ARCNN", "gaussian", "Set12"): {10: 34.86, 30: 29.67, 50: 27.32, 70: 25.75},
    ("ARCNN", "gaussian", "Kodak24"): {10: 34.89, 30: 29.74, 50: 27.64, 70: 26.34},
    ("ARCNN", "gaussian", "BSD68"): {10: 33.90, 30: 28.42, 50: 26.27, 70: 24.95},
    ("ARCNN", "gaussian", "Urban100"): {10: 35.02, 30: 29.44, 50: 26.81, 70: 25.02},
    ("FARCNN", "gaussian", "Set12"): {10: 34.53, 30: 29.50, 50: 27.15, 70: 25.62},
    ("FARCNN", "gaussian", "Kodak24"): {10: 34.50, 30: 29.60, 50: 27.50, 70: 26.21},
    ("FARCNN", "gaussian", "BSD68"): {10: 33.58, 30: 28.26, 50: 26.16, 70: 24.90},
    ("FARCNN", "gaussian", "Urban100"): {10: 34.41, 30: 29.08, 50: 26.52, 70: 24.84},
    ("ARCNN", "poisson", "BSD68"): {1: 21.82, 2: 22.98, 4: 24.17, 8: 25.48},
    ("FARCNN", "poisson", "BSD68"): {1: 21.73, 2: 22.90, 4: 24.10, 8: 25.37},
}


def reference_psnr(method: str, family: str, dataset: str, level: float) -> float | None:
    table = REFERENCE_PSNR.get((method, family, dataset))
    if table is None:
        return None
    return table.get(int(level)) if float(level).is_integer() else None


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """PSNR in dB for unit-range images; identical inputs give ``math.inf``."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {test.shape}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gain(noisy: float, denoised: float) -> float:
    if math.isinf(noisy) and math.isinf(denoised):
        return 0.0
    return denoised - noisy


@dataclass
class EvalRow:
    image: str
    family: str
    level: float
    noisy_psnr: float
    denoised_psnr: float

    @property
    def gain(self) -> float:
        return _gain(self.noisy_psnr, self.denoised_psnr)


@dataclass
class EvalReport:
    dataset: str
    rows: list[EvalRow] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def groups(self) -> dict[tuple[str, float], list[EvalRow]]:
        out: dict = {}
        for r in self.rows:
            out.setdefault((r.family, r.level), []).append(r)
        return out

    def mean_psnr(self, family: str, level: float) -> float:
        return float(np.mean([r.denoised_psnr for r in self.groups()[(family, level)]]))

    def mean_noisy_psnr(self, family: str, level: float) -> float:
        return float(np.mean([r.noisy_psnr for r in self.groups()[(family, level)]]))

    def mean_gain(self, family: str, level: float) -> float:
        return float(np.mean([r.gain for r in self.groups()[(family, level)]]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("image,family,level,noisy_psnr,denoised_psnr\n")
        for r in self.rows:
            buf.write(f"{r.image},{r.family},{r.level:g},{_fmt(r.noisy_psnr)},{_fmt(r.denoised_psnr)}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def summary(self, method: str = "ARCNN") -> str:
        """Aligned per-level table with the published value alongside, when one exists."""
        head = ("dataset", "family", "level", "images", "noisy dB", "denoised dB", "gain dB", f"{method} ref")
        lines = [head]
        for (family, level), rows in self.groups().items():
            ref = reference_psnr(method, family, self.dataset, level)
            lines.append((
                self.dataset, family, f"{level:g}", str(len(rows)),
                _fmt(self.mean_noisy_psnr(family, level), 2),
                _fmt(self.mean_psnr(family, level), 2),
                _fmt(self.mean_gain(family, level), 2),
                "-" if ref is None else f"{ref:.2f}",
            ))
        widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
        text = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in lines]
        text.insert(1, "  ".join("-" * w for w in widths))
        if self.failures:
            text.append(f"{len(self.failures)} image(s) failed:")
            text.extend(f"  {img}: {err}" for img, err in self.failures)
        return "\n".join(text) + "\n"


def _fmt(x: float, digits: int = 4) -> str:
    return "inf" if math.isinf(x) else f"{x:.{digits}f}"


def eval_seed_for(eval_seed: int, image_index: int, level: float) -> int:
    return rng.derive(eval_seed, image_index, rng.float_key(level))


def evaluate(
    model: Model,
    manifest: DatasetManifest,
    family: str,
    levels,
    eval_seed: int = 0,
    *,
    tile: int = 128,
    overlap: int = 20,
) -> EvalReport:
    """Corrupt every image at every level, denoise, and score against the clean image.

    The noisy baseline is clamped to [0, 1] before scoring; the network sees
    the unclamped noisy image.  Images that fail to load are listed in
    ``report.failures`` and skipped.
    """
    report = EvalReport(manifest.source_tag or "dataset")
    for i, (path, _, _) in enumerate(manifest.entries):
        name = Path(path).name
        try:
            clean = manifest.image(i)
        except (OSError, ValueError) as e:
            report.failures.append((name, str(e)))
            continue
        for level in levels:
            level = float(level)
            noisy = corrupt(clean, family, level, eval_seed_for(eval_seed, i, level))
            den = denoise_image(model, noisy.astype(model.dtype), tile=tile, overlap=overlap)
            report.rows.append(EvalRow(name, family, level,
                                       psnr(clean, np.clip(noisy, 0.0, 1.0)), psnr(clean, den)))
    return report


def attention_maps(model: Model, image: np.ndarray) -> np.ndarray:
    """Eval-mode attention weights for a whole 2-D image, shape (k, h, w)."""
    x = np.asarray(image, dtype=model.dtype)[None, None]
    _, _, A, _ = denoise_forward(model, x, Mode.EVAL)
    return A[0]


def heatmap_bytes(amap: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant map becomes mid-gray 128."""
    lo, hi = float(amap.min()), float(amap.max())
    if hi == lo:
        return np.full(amap.shape, 128, dtype=np.uint8)
    return np.rint((amap - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_attention_heatmaps(model: Model, image: np.ndarray, layer_indices, out_dir):
    """Write ``attn_L{layer}.pgm`` for each requested 1-based layer.

    Returns ``(paths, maps)`` where ``maps`` holds the unnormalised weights
    of all k layers.
    """
    k = model.config.num_layers
    layers = list(layer_indices)
    bad = [i for i in layers if not 1 <= i <= k]
    if bad:
        raise ValueError(f"layer indices {bad} outside 1..{k}")
    maps = attention_maps(model, image)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in layers:
        p = out_dir / f"attn_L{i}.pgm"
        p.write_bytes(encode_pgm(heatmap_bytes(maps[i - 1])))
        paths.append(p)
    return paths, maps
