"""Deterministic Gaussian and Poisson corruption.

Intensities live in [0, 1].  Gaussian sigma is quoted on the 8-bit scale and
divided by 255; Poisson noise scales the image to ``peak``, samples counts and
scales back.  Noisy outputs are never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng

GAUSSIAN = "gaussian"
POISSON = "poisson"

GAUSSIAN_BLIND_RANGE = (0.0, 75.0)
POISSON_BLIND_RANGE = (1.0, 10.0)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family plus either a fixed level or a blind ``(lo, hi)`` range."""

    family: str
    level: float | None = None
    blind: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family not in (GAUSSIAN, POISSON):
            raise ValueError(f"unknown noise family {self.family!r}")
        if (self.level is None) == (self.blind is None):
            raise ValueError("give exactly one of a fixed level or a blind range")
        if self.blind is not None:
            lo, hi = self.blind
            bound_lo, bound_hi = GAUSSIAN_BLIND_RANGE if self.family == GAUSSIAN else POISSON_BLIND_RANGE
            if not bound_lo <= lo <= hi <= bound_hi:
                raise ValueError(f"{self.family} blind range must lie within [{bound_lo:g}, {bound_hi:g}]")
        elif self.family == GAUSSIAN and self.level < 0:
            raise ValueError("sigma must be >= 0")
        elif self.family == POISSON and self.level <= 0:
            raise ValueError("peak must be > 0")

    @property
    def is_blind(self) -> bool:
        return self.blind is not None

    def with_level(self, level: float) -> "NoiseSpec":
        return NoiseSpec(self.family, level=float(level))

    def describe(self) -> str:
        name = "sigma" if self.family == GAUSSIAN else "peak"
        if self.is_blind:
            return f"{self.family} {name} in [{self.blind[0]:g}, {self.blind[1]:g}]"
        return f"{self.family} {name}={self.level:g}"

    def to_dict(self) -> dict:
        return {"family": self.family, "level": self.level, "blind": list(self.blind) if self.blind else None}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        blind = tuple(d["blind"]) if d.get("blind") else None
        return cls(d["family"], level=d.get("level"), blind=blind)


def gaussian_corrupt(clean: np.ndarray, sigma255: float, seed: int) -> np.ndarray:
    if sigma255 < 0:
        raise ValueError("sigma must be >= 0")
    clean = np.asarray(clean)
    if sigma255 == 0:
        return clean.copy()
    noise = rng.normals(seed, clean.size).reshape(clean.shape) * (sigma255 / 255.0)
    return (clean + noise).astype(clean.dtype, copy=False)


def poisson_counts(lam: np.ndarray, seed: int) -> np.ndarray:
    """Knuth multiplication sampler; pixel ``p`` draws from ``derive(seed, p)``."""
    lam = np.maximum(np.asarray(lam, dtype=np.float64).reshape(-1), 0.0)
    keys = rng.substream_keys(seed, lam.size)
    limit = np.exp(-lam)
    prod = np.ones_like(lam)
    counts = np.zeros(lam.size, dtype=np.int64)
    active = np.arange(lam.size)
    j = 0
    while active.size:
        prod[active] *= rng.uniforms_at(keys[active], j)
        still = prod[active] > limit[active]
        active = active[still]
        counts[active] += 1
        j += 1
    return counts


def poisson_corrupt(clean: np.ndarray, peak: float, seed: int) -> np.ndarray:
    if peak <= 0:
        raise ValueError("peak must be > 0")
    clean = np.asarray(clean)
    counts = poisson_counts(clean * float(peak), seed).reshape(clean.shape)
    return (counts / float(peak)).astype(clean.dtype, copy=False)


def corrupt(clean: np.ndarray, family: str, level: float, seed: int) -> np.ndarray:
    if family == GAUSSIAN:
        return gaussian_corrupt(clean, level, seed)
    if family == POISSON:
        return poisson_corrupt(clean, level, seed)
    raise ValueError(f"unknown noise family {family!r}")


def sample_level(spec: NoiseSpec, sample_index: int, epoch_seed: int) -> float:
    """Fixed level, or a uniform draw from the blind range keyed by (seed, index)."""
    if not spec.is_blind:
        return float(spec.level)
    lo, hi = spec.blind
    return lo + (hi - lo) * rng.uniform(rng.derive(epoch_seed, sample_index))
