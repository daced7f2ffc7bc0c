"""Randomized Hadamard rotations and coordinate permutations.

The rotation is the classic randomized Hadamard transform: flip signs with a
shared Rademacher diagonal, then apply an orthonormal Walsh-Hadamard matrix
(Sylvester ordering). A *partial* rotation stops the butterfly recursion
after ``depth_used`` of the ``depth_full`` stages, which is exactly the same
linear map as applying a full rotation independently to each contiguous block of
``2**depth_used`` coordinates; callers exploit that to keep rotation blocks
aligned with quantization chunks.

Internally the butterflies run in float64 and results are cast back to
float32. Because the per-block op order is identical whether the input is
viewed as one partial transform or as stacked full transforms of the blocks,
the two formulations agree bitwise, and forward-then-inverse round-trips
reproduce the original float32 values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vectors import GradientVector, SeedSpec


@dataclass(frozen=True)
class RotationSpec:
    """Shared description of one round's rotation.

    ``sign_seed`` is the derived stream seed for the Rademacher diagonal; two
    workers holding the same spec regenerate bitwise-identical signs, and the
    seed doubles as a compact identifier in serialized payloads.
    """

    depth_full: int
    depth_used: int
    sign_seed: int
    signs: np.ndarray

    def __post_init__(self) -> None:
        if not 0 <= self.depth_used <= self.depth_full:
            raise ValueError("need 0 <= depth_used <= depth_full")
        signs = np.ascontiguousarray(self.signs, dtype=np.float32)
        if signs.size != 1 << self.depth_full:
            raise ValueError("signs length must be 2**depth_full")
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be +-1")
        signs.flags.writeable = False
        object.__setattr__(self, "signs", signs)

    @property
    def padded_len(self) -> int:
        return 1 << self.depth_full

    @property
    def block_size(self) -> int:
        return 1 << self.depth_used

    @classmethod
    def for_round(
        cls,
        seeds: SeedSpec,
        round_index: int,
        padded_len: int,
        max_block: int = 1024,
    ) -> "RotationSpec":
        """Build the spec all workers share for ``round_index``.

        The sign diagonal is redrawn every round from the worker-independent
        stream tagged ``"rotation-signs"``. ``max_block`` caps the rotation
        block (power of two); blocks never exceed the padded length.
        """
        if padded_len < 1 or padded_len & (padded_len - 1):
            raise ValueError("padded_len must be a power of two")
        if max_block < 1 or max_block & (max_block - 1):
            raise ValueError("max_block must be a power of two")
        depth_full = padded_len.bit_length() - 1
        depth_used = min(depth_full, max_block.bit_length() - 1)
        seed = seeds.stream_seed("rotation-signs", round_index)
        rng = np.random.Generator(np.random.PCG64(seed))
        signs = rng.integers(0, 2, size=padded_len).astype(np.float32) * 2.0 - 1.0
        return cls(depth_full, depth_used, seed, signs)


def _butterflies(rows: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along axis 1 (Sylvester order).

    ``rows`` is (num_blocks, block) float64 with block a power of two.
    """
    m, block = rows.shape
    width = 1
    while width < block:
        rows = rows.reshape(m, -1, 2 * width)
        lo = rows[:, :, :width]
        hi = rows[:, :, width:]
        rows = np.concatenate((lo + hi, lo - hi), axis=2)
        width *= 2
    return rows.reshape(m, block)


def _check_spec(v: GradientVector, spec: RotationSpec) -> None:
    if v.padded_len != spec.padded_len:
        raise ValueError("vector and rotation spec disagree on padded length")


def rht_forward(v: GradientVector, spec: RotationSpec) -> GradientVector:
    """Apply signs, then the orthonormal blockwise Hadamard.

    The result lives in the rotated (padded) domain, so its logical length is
    the full padded length even when the input had a zero tail.
    """
    _check_spec(v, spec)
    work = v.values.astype(np.float64) * spec.signs.astype(np.float64)
    work = _butterflies(work.reshape(-1, spec.block_size))
    work *= float(spec.block_size) ** -0.5
    return GradientVector(work.reshape(-1).astype(np.float32), v.padded_len)


def rht_inverse(v: GradientVector, spec: RotationSpec) -> GradientVector:
    """Invert :func:`rht_forward`: Hadamard (self-inverse) then signs."""
    _check_spec(v, spec)
    work = _butterflies(v.values.astype(np.float64).reshape(-1, spec.block_size))
    work *= float(spec.block_size) ** -0.5
    work = work.reshape(-1) * spec.signs.astype(np.float64)
    return GradientVector(work.astype(np.float32), v.padded_len)


def coordinate_permutation(seeds: SeedSpec, round_index: int, length: int) -> np.ndarray:
    """Shared random permutation of ``length`` logical coordinates."""
    if length < 1:
        raise ValueError("length must be positive")
    return seeds.rng("coordinate-permutation", round_index).permutation(length)


def permute(v: GradientVector, perm: np.ndarray) -> GradientVector:
    """Reorder the logical coordinates: output[i] = input[perm[i]]."""
    if perm.size != v.logical_len:
        raise ValueError("permutation length must equal logical length")
    buf = np.zeros(v.padded_len, dtype=np.float32)
    buf[: v.logical_len] = v.logical[perm]
    return GradientVector(buf, v.logical_len)


def unpermute(v: GradientVector, perm: np.ndarray) -> GradientVector:
    """Invert :func:`permute` with the same permutation array."""
    if perm.size != v.logical_len:
        raise ValueError("permutation length must equal logical length")
    buf = np.zeros(v.padded_len, dtype=np.float32)
    buf[perm] = v.logical
    return GradientVector(buf, v.logical_len)
