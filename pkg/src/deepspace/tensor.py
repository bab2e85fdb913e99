"""Dense array substrate: dtype policy, deterministic RNG, and the elementwise /
reduction / random-fill primitives the layer code builds on.

Arrays are plain numpy ndarrays in row-major (C) order. Images and feature maps
use (channels, height, width) axis order, with an optional leading batch axis.
All functions here are pure: inputs are never modified in place.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray

DTYPE_SINGLE = np.float32
DTYPE_DOUBLE = np.float64

_ELEMENTWISE_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}

_REDUCE_KINDS = ("sum", "mean", "argmax")


def dtype_for(precision: str) -> np.dtype:
    """Map a precision name ("single" | "double") to a numpy dtype."""
    if precision == "single":
        return np.dtype(DTYPE_SINGLE)
    if precision == "double":
        return np.dtype(DTYPE_DOUBLE)
    raise ValueError(f"unknown precision {precision!r}; expected 'single' or 'double'")


class Rng:
    """Seeded pseudo-random source (PCG64; 64-bit state).

    The same seed yields the same sequence of draws bit-exactly across runs.
    Single-owner: do not share one Rng between concurrent consumers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape=(), dtype=DTYPE_SINGLE) -> Tensor:
        """Draws in [low, high)."""
        if not high > low:
            raise ValueError(f"uniform bounds must satisfy low < high, got [{low}, {high})")
        u = self._gen.random(size=shape, dtype=np.float64)
        return (low + (high - low) * u).astype(dtype)

    def gaussian(self, mean: float, stddev: float, shape=(), dtype=DTYPE_SINGLE) -> Tensor:
        if not stddev > 0:
            raise ValueError(f"gaussian stddev must be > 0, got {stddev}")
        z = self._gen.standard_normal(size=shape, dtype=np.float64)
        return (mean + stddev * z).astype(dtype)

    def integers(self, low: int, high: int, shape=()) -> Tensor:
        """Integer draws in [low, high)."""
        return self._gen.integers(low, high, size=shape, dtype=np.int64)

    def permutation(self, n: int) -> Tensor:
        return self._gen.permutation(n)


def random_fill(rng: Rng, dist, shape, dtype=DTYPE_SINGLE) -> Tensor:
    """Fill a tensor of `shape` from a distribution descriptor.

    `dist` is ("uniform", low, high) or ("gaussian", mean, stddev).
    """
    kind, a, b = dist
    if kind == "uniform":
        return rng.uniform(a, b, shape, dtype)
    if kind == "gaussian":
        return rng.gaussian(a, b, shape, dtype)
    raise ValueError(f"unknown distribution kind {kind!r}")


def elementwise(kind: str, a: Tensor, b) -> Tensor:
    """Apply a binary op elementwise; `b` may be a same-shape tensor or a scalar."""
    try:
        op = _ELEMENTWISE_OPS[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    a = np.asarray(a)
    if np.ndim(b) != 0:
        b = np.asarray(b)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch for {kind!r}: {a.shape} vs {b.shape}")
    return op(a, b)


def reduce(kind: str, t: Tensor, axis: int) -> Tensor:
    """Reduce along one axis (sum / mean / argmax); output rank drops by one."""
    t = np.asarray(t)
    if kind not in _REDUCE_KINDS:
        raise ValueError(f"unknown reduction {kind!r}")
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} invalid for rank-{t.ndim} tensor")
    if kind == "sum":
        return t.sum(axis=axis)
    if kind == "mean":
        return t.mean(axis=axis)
    return t.argmax(axis=axis)


def strides_of(shape) -> tuple[int, ...]:
    """Row-major element strides: last axis has stride 1."""
    strides = []
    acc = 1
    for dim in reversed(shape):
        strides.append(acc)
        acc *= dim
    return tuple(reversed(strides))


def flat_index(shape, coords) -> int:
    """Row-major flat offset of a coordinate tuple."""
    if len(coords) != len(shape):
        raise ValueError(f"got {len(coords)} coords for rank-{len(shape)} shape")
    flat = 0
    for c, d, s in zip(coords, shape, strides_of(shape)):
        if not 0 <= c < d:
            raise ValueError(f"coordinate {c} out of range for dimension {d}")
        flat += c * s
    return flat


def coords_of(shape, flat: int) -> tuple[int, ...]:
    """Inverse of flat_index."""
    total = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if not 0 <= flat < total:
        raise ValueError(f"flat index {flat} out of range for shape {tuple(shape)}")
    coords = []
    for s in strides_of(shape):
        coords.append(flat // s)
        flat %= s
    return tuple(coords)
