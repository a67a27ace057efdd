"""Grayscale PGM I/O, dataset manifests, patch sampling and augmentation.

Images are 2-D float64 arrays with values in [0, 1].  All random choices in
batch assembly are keyed on ``(run_seed, purpose, global slot index)`` so a
batch is a pure function of its inputs, whatever the worker count.
"""

from __future__ import annotations

import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .corruption import NoiseSpec, corrupt, sample_level

PATCH_SIZE = 64
DEFAULT_BORDER = 20

# stream purposes for make_batch
_IMAGE, _PATCH, _AUG, _LEVEL, _NOISE = range(5)


class PGMError(ValueError):
    pass


_TOKEN = re.compile(rb"(?:\s|#[^\n\r]*)*([^\s#]+)")


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a binary (P5) 8-bit PGM into a [0, 1] float array."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PGMError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, *dims = tokens
    if magic != b"P5":
        raise PGMError(f"not a binary PGM (magic {magic[:8]!r}, expected b'P5')")
    try:
        width, height, maxval = (int(t) for t in dims)
    except ValueError:
        raise PGMError(f"non-numeric PGM header field in {dims!r}") from None
    if width < 1 or height < 1:
        raise PGMError(f"invalid PGM size {width}x{height}")
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval}; only 8-bit (255) PGM is accepted")
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f"):
        raise PGMError("missing whitespace after PGM header")
    pos += 1
    need = width * height
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise PGMError(f"truncated PGM payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width) / 255.0


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_pgm(data)
    except PGMError as e:
        raise PGMError(f"{path}: {e}") from None


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    h, w = img.shape
    payload = img if img.dtype == np.uint8 else to_bytes(img)
    return b"P5\n%d %d\n255\n" % (w, h) + payload.tobytes()


def write_pgm(image: np.ndarray, path) -> None:
    data = encode_pgm(image)
    with open(path, "wb") as fh:
        fh.write(data)


@dataclass
class DatasetManifest:
    """Ordered image list; decoded images are cached on first use."""

    entries: list[tuple[str, int, int]]
    source_tag: str = ""
    _images: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        paths = [e[0] for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")

    def __len__(self):
        return len(self.entries)

    def image(self, i: int) -> np.ndarray:
        if not self._images:
            self._images = [None] * len(self.entries)
        if self._images[i] is None:
            self._images[i] = read_pgm(self.entries[i][0])
        return self._images[i]

    @classmethod
    def from_paths(cls, paths, source_tag: str = "") -> "DatasetManifest":
        entries, images = [], []
        for p in paths:
            img = read_pgm(p)
            entries.append((str(p), img.shape[0], img.shape[1]))
            images.append(img)
        return cls(entries, source_tag, images)


def load_manifest(path, source_tag: str = "") -> DatasetManifest:
    """One image path per line; ``#`` starts a comment; relative paths resolve
    against the manifest's directory."""
    base = Path(path).parent
    paths = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            p = Path(line)
            paths.append(p if p.is_absolute() else base / p)
    return DatasetManifest.from_paths(paths, source_tag or Path(path).stem)


def write_manifest(paths, path) -> None:
    Path(path).write_text("".join(f"{p}\n" for p in paths), encoding="utf-8")


def extract_patch(image: np.ndarray, size: int, sample_index: int, epoch_seed: int) -> np.ndarray:
    """Uniformly placed ``size`` x ``size`` crop keyed by (epoch_seed, sample_index)."""
    h, w = image.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")
    key = rng.derive(epoch_seed, sample_index)
    y = rng.randint(key, h - size + 1, 0)
    x = rng.randint(key, w - size + 1, 1)
    return image[y:y + size, x:x + size].copy()


# Element t = 4*f + r maps a patch p to rot90(fliplr(p) if f else p, r), with
# rot90 counter-clockwise.  Since fliplr . rot = rot^-1 . fliplr, applying a
# then b gives (f_a ^ f_b, r_b + (-r_a if f_b else r_a)) mod 4.
def dihedral(patch: np.ndarray, t: int) -> np.ndarray:
    if patch.ndim != 2 or patch.shape[0] != patch.shape[1]:
        raise ValueError(f"dihedral transforms need a square patch, got {patch.shape}")
    if not 0 <= t < 8:
        raise ValueError("transform index must be in 0..7")
    f, r = divmod(t, 4)
    out = np.fliplr(patch) if f else patch
    return np.ascontiguousarray(np.rot90(out, r))


def dihedral_compose(a: int, b: int) -> int:
    """Index of ``dihedral(dihedral(p, a), b)`` as a single transform."""
    fa, ra = divmod(a, 4)
    fb, rb = divmod(b, 4)
    r = (rb - ra) % 4 if fb else (rb + ra) % 4
    return 4 * (fa ^ fb) + r


def dihedral_inverse(t: int) -> int:
    f, r = divmod(t, 4)
    return t if f else (4 - r) % 4


@dataclass
class PatchBatch:
    clean: np.ndarray  # (B, 1, P, P)
    noisy: np.ndarray
    levels: np.ndarray
    transforms: np.ndarray
    mask_border: int = DEFAULT_BORDER


def default_workers() -> int:
    env = os.environ.get("ARDN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def make_slot(manifest: DatasetManifest, spec: NoiseSpec, g: int, run_seed: int, patch_size: int = PATCH_SIZE):
    """Build global sample ``g``: returns (clean, noisy, level, transform)."""
    idx = rng.randint(rng.derive(run_seed, _IMAGE, g), len(manifest))
    patch = extract_patch(manifest.image(idx), patch_size, g, rng.derive(run_seed, _PATCH))
    t = rng.randint(rng.derive(run_seed, _AUG, g), 8)
    patch = dihedral(patch, t)
    level = sample_level(spec, g, rng.derive(run_seed, _LEVEL))
    noisy = corrupt(patch, spec.family, level, rng.derive(run_seed, _NOISE, g))
    return patch, noisy, level, t


def make_batch(
    manifest: DatasetManifest,
    batch_size: int,
    spec: NoiseSpec,
    iteration: int,
    run_seed: int,
    *,
    patch_size: int = PATCH_SIZE,
    border: int = DEFAULT_BORDER,
    dtype=np.float64,
    workers: int | None = None,
) -> PatchBatch:
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    if 2 * border >= patch_size:
        raise ValueError("mask border must be smaller than half the patch size")
    first = iteration * batch_size
    slots = range(first, first + batch_size)
    workers = default_workers() if workers is None else workers

    def build(g):
        return make_slot(manifest, spec, g, run_seed, patch_size)

    if workers > 1 and batch_size > 1:
        for i in range(len(manifest)):  # decode serially before fanning out
            manifest.image(i)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(build, slots))
    else:
        results = [build(g) for g in slots]
    clean = np.stack([r[0] for r in results])[:, None].astype(dtype)
    noisy = np.stack([r[1] for r in results])[:, None].astype(dtype)
    levels = np.array([r[2] for r in results])
    transforms = np.array([r[3] for r in results], dtype=np.int64)
    return PatchBatch(clean, noisy, levels, transforms, border)
