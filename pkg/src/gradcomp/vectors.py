"""Dense gradient buffers, chunk geometry, wire rounding, and seed streams.

Every piece of randomness in this library flows through :class:`SeedSpec` so
that simulated workers can reproduce shared draws (sign diagonals, coordinate
permutations, synthetic data) bit for bit, and so reruns of an experiment are
bitwise reproducible. The derivation chain is documented on SeedSpec and uses
only portable mixing functions (SplitMix64, FNV-1a) feeding numpy's PCG64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Largest finite IEEE 754 binary16 value. Overflowing floats saturate here
# instead of becoming inf on the simulated wire.
HALF_MAX = 65504.0

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_WORKER_SALT = 0x517CC1B727220A95


def splitmix64(value: int) -> int:
    """One application of the SplitMix64 finalizer (public domain constants)."""
    z = (value + _SPLITMIX_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """FNV-1a hash of the UTF-8 encoding of ``text``."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


@dataclass(frozen=True)
class SeedSpec:
    """Root of all randomness for one experiment.

    A stream seed is derived as::

        h = splitmix64(experiment_seed ^ fnv1a64(tag))
        h = splitmix64(h ^ round_index)
        h = splitmix64(h ^ (worker + 0x517CC1B727220A95))   # only if worker given

    and feeds ``numpy.random.Generator(numpy.random.PCG64(h))``. Streams that
    omit the worker component are identical on every worker; that is how
    workers agree on sign diagonals, permutations, and shared gradient
    structure without communicating.
    """

    experiment_seed: int

    def __post_init__(self) -> None:
        if not 0 <= self.experiment_seed <= _MASK64:
            raise ValueError("experiment_seed must fit in 64 bits")

    def stream_seed(self, tag: str, round_index: int = 0, worker: int | None = None) -> int:
        if round_index < 0:
            raise ValueError("round_index must be non-negative")
        h = splitmix64((self.experiment_seed ^ fnv1a64(tag)) & _MASK64)
        h = splitmix64(h ^ round_index)
        if worker is not None:
            if worker < 0:
                raise ValueError("worker must be non-negative")
            h = splitmix64(h ^ ((worker + _WORKER_SALT) & _MASK64))
        return h

    def rng(self, tag: str, round_index: int = 0, worker: int | None = None) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.stream_seed(tag, round_index, worker)))


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class GradientVector:
    """A float32 vector padded to a power-of-two length.

    ``values`` has length ``padded_len`` (a power of two); only the first
    ``logical_len`` entries carry payload and the tail is exactly zero. The
    buffer is marked read-only so shared references cannot be mutated by one
    simulated worker behind another's back.
    """

    values: np.ndarray
    logical_len: int

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float32, copy=True, order="C")
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a non-empty 1-d array")
        if vals.size & (vals.size - 1):
            raise ValueError("padded length must be a power of two")
        if not 1 <= self.logical_len <= vals.size:
            raise ValueError("logical_len out of range")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise ValueError(f"non-finite value at index {bad}")
        if np.any(vals[self.logical_len:]):
            raise ValueError("padding tail must be exactly zero")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def padded_len(self) -> int:
        return self.values.size

    @property
    def logical(self) -> np.ndarray:
        """Read-only view of the meaningful prefix."""
        return self.values[: self.logical_len]


def pad_to_pow2(raw) -> GradientVector:
    """Wrap a raw float sequence, zero-padding to the next power of two."""
    arr = np.ascontiguousarray(raw, dtype=np.float32)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("input must be a non-empty 1-d array")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"non-finite value at index {bad}")
    padded = _next_pow2(arr.size)
    buf = np.zeros(padded, dtype=np.float32)
    buf[: arr.size] = arr
    return GradientVector(buf, arr.size)


def fp16_round_trip(x):
    """Round float32 data through IEEE binary16 and back.

    Uses the hardware round-to-nearest-even cast; values whose magnitude
    exceeds the largest finite half (65504) saturate to +-65504 rather than
    becoming inf. Idempotent. Accepts scalars or arrays; inputs are assumed
    finite.
    """
    arr = np.asarray(x, dtype=np.float32)
    with np.errstate(over="ignore"):
        out = arr.astype(np.float16).astype(np.float32)
    overflowed = np.isinf(out)
    if np.any(overflowed):
        out = np.where(overflowed, np.copysign(np.float32(HALF_MAX), arr), out)
    if np.ndim(x) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ChunkGeometry:
    """Partition of a logical vector into fixed-size contiguous chunks.

    The last chunk is implicitly zero-padded when ``chunk_size`` does not
    divide the logical length.
    """

    chunk_size: int
    num_chunks: int

    def __post_init__(self) -> None:
        if self.chunk_size < 1 or self.num_chunks < 1:
            raise ValueError("chunk_size and num_chunks must be positive")

    @classmethod
    def for_dim(cls, logical_len: int, chunk_size: int) -> "ChunkGeometry":
        if logical_len < 1:
            raise ValueError("logical_len must be positive")
        return cls(chunk_size, math.ceil(logical_len / chunk_size))

    def covered_len(self) -> int:
        return self.chunk_size * self.num_chunks


def chunk_sq_norms(v, geom: ChunkGeometry) -> np.ndarray:
    """Per-chunk sums of squares of the logical coordinates (float64).

    Entry p is the sum of ``v.logical[i]**2`` over chunk p's index range;
    out-of-range positions in the final chunk contribute zero. Accepts a
    GradientVector or a plain 1-d array.
    """
    vals = v.logical if isinstance(v, GradientVector) else np.asarray(v, dtype=np.float32)
    if geom.num_chunks != math.ceil(vals.size / geom.chunk_size):
        raise ValueError("geometry does not match the vector's logical length")
    buf = np.zeros(geom.covered_len(), dtype=np.float64)
    buf[: vals.size] = vals
    return (buf.reshape(geom.num_chunks, geom.chunk_size) ** 2).sum(axis=1)
