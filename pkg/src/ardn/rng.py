"""Counter-based SplitMix64 streams.

Every random draw in the package is a pure function of a 64-bit key and a
draw counter, so batches, corruption and initialisation are reproducible
regardless of iteration order or worker count.

Stream definition (fixed, so other implementations can match bit for bit)::

    draw(key, j)    = mix64(key + GAMMA * (j + 1))      mod 2**64
    uniform(key, j) = (draw(key, j) >> 11) * 2**-53      in [0, 1)
    derive(s, k)    = mix64(s ^ mix64(k + GAMMA))

``derive`` folds any number of integer keys left to right.
"""

from __future__ import annotations

import struct

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 2.0**-53


def mix64(z: int) -> int:
    """SplitMix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_M1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_M2)
    z ^= z >> np.uint64(31)
    return z


def derive(seed: int, *keys: int) -> int:
    """Fold integer keys into a 64-bit stream key."""
    s = seed & MASK64
    for k in keys:
        s = mix64(s ^ mix64((k + GAMMA) & MASK64))
    return s


def float_key(x: float) -> int:
    """Stable integer key for a real value (its IEEE-754 bit pattern)."""
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def draws(key: int, count: int, offset: int = 0) -> np.ndarray:
    """Raw 64-bit outputs ``offset .. offset+count-1`` of stream ``key``."""
    j = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key & MASK64) + j * np.uint64(GAMMA)
    return _mix64_array(z)


def uniforms(key: int, count: int, offset: int = 0) -> np.ndarray:
    """Doubles in [0, 1) from stream ``key``."""
    return (draws(key, count, offset) >> np.uint64(11)).astype(np.float64) * _INV53


def uniform(key: int, j: int = 0) -> float:
    """Scalar version of :func:`uniforms`."""
    return (mix64((key + GAMMA * (j + 1)) & MASK64) >> 11) * _INV53


def randint(key: int, n: int, j: int = 0) -> int:
    """Integer in ``[0, n)`` from draw ``j`` of stream ``key``."""
    return min(int(uniform(key, j) * n), n - 1)


def normals(key: int, count: int) -> np.ndarray:
    """Standard normal deviates by Box-Muller (cosine branch).

    Deviate ``p`` consumes draws ``2p`` and ``2p+1``.
    """
    u = uniforms(key, 2 * count)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def substream_keys(key: int, count: int) -> np.ndarray:
    """Vectorised ``derive(key, p)`` for ``p = 0 .. count-1``."""
    p = np.arange(count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        inner = _mix64_array(p + np.uint64(GAMMA))
    return _mix64_array(np.uint64(key & MASK64) ^ inner)


def uniforms_at(keys: np.ndarray, j: int) -> np.ndarray:
    """Draw ``j`` of each stream in ``keys`` (vectorised :func:`uniform`)."""
    with np.errstate(over="ignore"):
        z = keys + np.uint64((GAMMA * (j + 1)) & MASK64)
    return (_mix64_array(z) >> np.uint64(11)).astype(np.float64) * _INV53
