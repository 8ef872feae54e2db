"""Array and randomness primitives shared by every other module.

Tensors throughout the package are plain numpy float64 ndarrays, row-major
and contiguous. Randomness comes from numpy's PCG64 generator seeded with a
single unsigned 64-bit integer, so any experiment replays bit-for-bit from
its seed on every platform.
"""

from __future__ import annotations

import numpy as np

__all__ = ["create_rng", "glorot_init", "require_finite"]

_SEED_LIMIT = 2**64


def create_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator for a 64-bit unsigned seed."""
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-uniform weight sheet of shape (fan_in, fan_out).

    Values are drawn uniformly from +-sqrt(6 / (fan_in + fan_out)).
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got ({fan_in}, {fan_out})")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def require_finite(arr: np.ndarray, name: str) -> np.ndarray:
    """Return `arr` unchanged, raising if it contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf values")
    return arr
