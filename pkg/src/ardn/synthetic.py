"""Deterministic piecewise-smooth grayscale scenes for demos and tests."""

import numpy as np
from scipy.ndimage import gaussian_filter

from . import rng


def make_scene(h: int, w: int, seed: int, shapes: int = 12) -> np.ndarray:
    """Shaded background with overlapping discs, boxes and a striped region."""
    u = iter(rng.uniforms(rng.derive(seed, 1), 2 + 5 * shapes))
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = 0.3 + 0.4 * (next(u) * yy + next(u) * xx)
    for _ in range(shapes):
        kind, cy, cx, r, val = (next(u) for _ in range(5))
        r = 0.05 + 0.25 * r
        cy, cx = cy * h / max(h, w), cx * w / max(h, w)
        if kind < 0.45:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        elif kind < 0.9:
            mask = (abs(yy - cy) < r) & (abs(xx - cx) < 0.6 * r)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            val = 0.5 + 0.4 * np.sin(2 * np.pi * 12 * (xx + yy)[mask])
        img[mask] = val
    img = gaussian_filter(img, 0.7)
    return np.clip(img, 0.0, 1.0)


def make_scene_bytes(h: int, w: int, seed: int) -> np.ndarray:
    """As :func:`make_scene`, quantised to 8-bit levels (exactly representable in PGM)."""
    return np.rint(make_scene(h, w, seed) * 255.0) / 255.0
