"""Compressor configs, payload types, and the per-worker compression math.

Payload wire format
-------------------
``encode_payload`` produces a little-endian byte string: one tag byte, then
the payload fields in declaration order, each variable-length array preceded
by the framing counts needed to parse it. Exact maps (u32 = uint32 LE,
i32/i8 = signed LE, f16/f32 = IEEE halves/singles LE):

====== ==========================================================================
tag 1  Sparse    u32 count | i32 indices[count] | f16 values[count]
tag 2  ChunkSet  u32 num_ids | u32 chunk_size | i32 chunk_ids[num_ids]
                 | f16 values[num_ids * chunk_size]
tag 3  Quant     u8 quant_bits | u32 block_size | u32 num_codes | u32 num_blocks
                 | i8 codes[num_codes] | f32 ranges[2 * num_blocks]
                 | u64 rotation_id
tag 4  LowRank   u32 rows | u32 cols | u32 rank | f32 left[rows * rank]
                 | f32 right[cols * rank]
tag 5  Dense     u8 bits | u32 count | f16 or f32 values[count]
====== ==========================================================================

The encoded byte length is a storage format, not the traffic model:
:func:`payload_bits` is the logical accounting used by the ledger (sparse
entries cost 32 index + 16 value bits, quantization codes cost ``quant_bits``
each plus 64 bits of range metadata per block, and chunk ids are free because
both sides derive them from the shared norm consensus).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .vectors import GradientVector, fp16_round_trip


class DegenerateMatrixError(ValueError):
    """Raised when a low-rank seed matrix stays rank-deficient after redraws."""


# ---------------------------------------------------------------------------
# Configs


@dataclass(frozen=True)
class TopKConfig:
    """Keep the k largest-magnitude coordinates per worker."""

    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be positive")


@dataclass(frozen=True)
class ChunkedTopKConfig:
    """Keep whole chunks, chosen by consensus on summed chunk energy.

    ``permute`` shuffles coordinates through a shared random permutation
    before chunking (and back after), which destroys the locality the scheme
    exploits; it exists as an ablation knob.
    """

    chunk_size: int
    chunks_selected: int
    permute: bool = False

    def __post_init__(self) -> None:
        if self.chunk_size < 1 or self.chunks_selected < 1:
            raise ValueError("chunk_size and chunks_selected must be positive")


@dataclass(frozen=True)
class RotatedQuantConfig:
    """Stochastic uniform quantization in a rotated basis.

    ``quant_bits`` sets the code grid, ``wire_bits`` the saturating
    aggregation width (wire_bits >= quant_bits), ``rotation_block`` the
    maximum Hadamard block, which is also the range-sharing chunk.
    """

    quant_bits: int
    wire_bits: int
    rotation_block: int = 1024

    def __post_init__(self) -> None:
        if not 2 <= self.quant_bits <= 8:
            raise ValueError("quant_bits must be in [2, 8]")
        if self.wire_bits < self.quant_bits or self.wire_bits > 32:
            raise ValueError("wire_bits must be in [quant_bits, 32]")
        if self.rotation_block < 2 or self.rotation_block & (self.rotation_block - 1):
            raise ValueError("rotation_block must be a power of two >= 2")


@dataclass(frozen=True)
class PowerSgdConfig:
    """Rank-r factorization with orthonormalized left factor."""

    rank: int
    warm_start: bool = True
    bypass_below: int = 4096

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if self.bypass_below < 0:
            raise ValueError("bypass_below must be non-negative")


@dataclass(frozen=True)
class DenseConfig:
    """No compression; 16 wires through IEEE half, 32 is the exact baseline."""

    bits: int = 16

    def __post_init__(self) -> None:
        if self.bits not in (16, 32):
            raise ValueError("bits must be 16 or 32")


CompressorConfig = Union[
    TopKConfig, ChunkedTopKConfig, RotatedQuantConfig, PowerSgdConfig, DenseConfig
]


def scheme_label(config: CompressorConfig) -> str:
    """Stable string id used in CSV output and time-model lookups."""
    if isinstance(config, TopKConfig):
        return "topk"
    if isinstance(config, ChunkedTopKConfig):
        return "chunked_topk_perm" if config.permute else "chunked_topk"
    if isinstance(config, RotatedQuantConfig):
        return "rotated_quant"
    if isinstance(config, PowerSgdConfig):
        return "powersgd"
    if isinstance(config, DenseConfig):
        return f"dense_fp{config.bits}"
    raise TypeError(f"unknown config type {type(config).__name__}")


# ---------------------------------------------------------------------------
# Payloads


@dataclass(frozen=True)
class SparsePayload:
    """Top-k selection: ascending indices and their fp16-rounded values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        idx = np.ascontiguousarray(self.indices, dtype=np.int32)
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if idx.shape != vals.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d and equal length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("indices must be strictly ascending and non-negative")
        idx.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class ChunkSetPayload:
    """Selected whole chunks: ascending chunk ids and their dense values."""

    chunk_ids: np.ndarray
    chunk_size: int
    values: np.ndarray

    def __post_init__(self) -> None:
        ids = np.ascontiguousarray(self.chunk_ids, dtype=np.int32)
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if ids.ndim != 1 or vals.ndim != 1:
            raise ValueError("chunk_ids and values must be 1-d")
        if ids.size and (np.any(np.diff(ids) <= 0) or ids[0] < 0):
            raise ValueError("chunk_ids must be strictly ascending and non-negative")
        if vals.size != ids.size * self.chunk_size:
            raise ValueError("values length must be num_ids * chunk_size")
        ids.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "chunk_ids", ids)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class QuantPayload:
    """Integer codes on a shared per-block grid, plus the grid itself."""

    codes: np.ndarray
    ranges: np.ndarray
    rotation_id: int
    quant_bits: int
    block_size: int

    def __post_init__(self) -> None:
        codes = np.ascontiguousarray(self.codes, dtype=np.int8)
        ranges = np.ascontiguousarray(self.ranges, dtype=np.float32)
        if codes.ndim != 1 or ranges.ndim != 2 or ranges.shape[1] != 2:
            raise ValueError("codes must be 1-d and ranges shaped (num_blocks, 2)")
        if codes.size != ranges.shape[0] * self.block_size:
            raise ValueError("codes length must be num_blocks * block_size")
        bound = (1 << (self.quant_bits - 1)) - 1
        if codes.size and int(np.abs(codes.astype(np.int64)).max()) > bound:
            raise ValueError("codes exceed the zero-mean grid bound")
        codes.flags.writeable = False
        ranges.flags.writeable = False
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "ranges", ranges)


@dataclass(frozen=True)
class LowRankPayload:
    """Factor pair: estimate = left @ right.T, reshaped to ``shape``."""

    left: np.ndarray
    right: np.ndarray
    shape: tuple

    def __post_init__(self) -> None:
        left = np.ascontiguousarray(self.left, dtype=np.float32)
        right = np.ascontiguousarray(self.right, dtype=np.float32)
        shape = (int(self.shape[0]), int(self.shape[1]))
        if left.ndim != 2 or right.ndim != 2 or left.shape[1] != right.shape[1]:
            raise ValueError("left and right must be 2-d with a common rank axis")
        if left.shape[0] != shape[0] or right.shape[0] != shape[1]:
            raise ValueError("factor row counts must match shape")
        left.flags.writeable = False
        right.flags.writeable = False
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "shape", shape)

    @property
    def rank(self) -> int:
        return self.left.shape[1]


@dataclass(frozen=True)
class DensePayload:
    """Uncompressed values at a declared wire width."""

    values: np.ndarray
    bits: int

    def __post_init__(self) -> None:
        if self.bits not in (16, 32):
            raise ValueError("bits must be 16 or 32")
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.ndim != 1:
            raise ValueError("values must be 1-d")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


Payload = Union[SparsePayload, ChunkSetPayload, QuantPayload, LowRankPayload, DensePayload]


def payload_bits(payload: Payload) -> int:
    """Logical wire size in bits, as charged by the traffic ledger.

    Sparse entries cost 48 bits each (32-bit index + 16-bit value). ChunkSet
    charges only the fp16 chunk values; ids ride on the shared norm consensus
    and are free. Quant charges ``quant_bits`` per code plus 64 bits (two
    fp32) of range metadata per block. LowRank charges 32 bits per factor
    entry. Dense charges its declared width per coordinate.
    """
    if isinstance(payload, SparsePayload):
        return 48 * payload.indices.size
    if isinstance(payload, ChunkSetPayload):
        return 16 * payload.values.size
    if isinstance(payload, QuantPayload):
        return payload.quant_bits * payload.codes.size + 64 * payload.ranges.shape[0]
    if isinstance(payload, LowRankPayload):
        return 32 * payload.rank * (payload.shape[0] + payload.shape[1])
    if isinstance(payload, DensePayload):
        return payload.bits * payload.values.size
    raise TypeError(f"unknown payload type {type(payload).__name__}")


# ---------------------------------------------------------------------------
# Binary encoding

_TAGS = {SparsePayload: 1, ChunkSetPayload: 2, QuantPayload: 3, LowRankPayload: 4, DensePayload: 5}


def encode_payload(payload: Payload) -> bytes:
    """Serialize to the little-endian layout documented in the module docstring."""
    out = [struct.pack("<B", _TAGS[type(payload)])]
    if isinstance(payload, SparsePayload):
        out.append(struct.pack("<I", payload.indices.size))
        out.append(payload.indices.astype("<i4").tobytes())
        out.append(payload.values.astype("<f2").tobytes())
    elif isinstance(payload, ChunkSetPayload):
        out.append(struct.pack("<II", payload.chunk_ids.size, payload.chunk_size))
        out.append(payload.chunk_ids.astype("<i4").tobytes())
        out.append(payload.values.astype("<f2").tobytes())
    elif isinstance(payload, QuantPayload):
        out.append(
            struct.pack(
                "<BIII",
                payload.quant_bits,
                payload.block_size,
                payload.codes.size,
                payload.ranges.shape[0],
            )
        )
        out.append(payload.codes.astype("<i1").tobytes())
        out.append(payload.ranges.astype("<f4").tobytes())
        out.append(struct.pack("<Q", payload.rotation_id & ((1 << 64) - 1)))
    elif isinstance(payload, LowRankPayload):
        out.append(struct.pack("<III", payload.shape[0], payload.shape[1], payload.rank))
        out.append(payload.left.astype("<f4").tobytes())
        out.append(payload.right.astype("<f4").tobytes())
    elif isinstance(payload, DensePayload):
        out.append(struct.pack("<BI", payload.bits, payload.values.size))
        kind = "<f2" if payload.bits == 16 else "<f4"
        out.append(payload.values.astype(kind).tobytes())
    else:
        raise TypeError(f"unknown payload type {type(payload).__name__}")
    return b"".join(out)


def decode_payload(blob: bytes) -> Payload:
    """Parse bytes produced by :func:`encode_payload`."""
    tag = blob[0]
    off = 1

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, blob, off)
        off += struct.calcsize(fmt)
        return vals

    def arr(dtype, count):
        nonlocal off
        a = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        off += a.nbytes
        return a

    if tag == 1:
        (count,) = take("<I")
        idx = arr("<i4", count)
        vals = arr("<f2", count).astype(np.float32)
        return SparsePayload(idx, vals)
    if tag == 2:
        num_ids, chunk_size = take("<II")
        ids = arr("<i4", num_ids)
        vals = arr("<f2", num_ids * chunk_size).astype(np.float32)
        return ChunkSetPayload(ids, chunk_size, vals)
    if tag == 3:
        quant_bits, block_size, num_codes, num_blocks = take("<BIII")
        codes = arr("<i1", num_codes)
        ranges = arr("<f4", 2 * num_blocks).reshape(num_blocks, 2)
        (rotation_id,) = take("<Q")
        return QuantPayload(codes, ranges, rotation_id, quant_bits, block_size)
    if tag == 4:
        rows, cols, rank = take("<III")
        left = arr("<f4", rows * rank).reshape(rows, rank)
        right = arr("<f4", cols * rank).reshape(cols, rank)
        return LowRankPayload(left, right, (rows, cols))
    if tag == 5:
        bits, count = take("<BI")
        vals = arr("<f2" if bits == 16 else "<f4", count).astype(np.float32)
        return DensePayload(vals, bits)
    raise ValueError(f"unknown payload tag {tag}")


# ---------------------------------------------------------------------------
# Selection


def _logical(v) -> np.ndarray:
    """Logical coordinates of a GradientVector, or the array itself."""
    if isinstance(v, GradientVector):
        return v.logical
    return np.asarray(v, dtype=np.float32)


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |values|, ties to the lower index, ascending."""
    flat = np.asarray(values)
    if flat.ndim != 1:
        raise ValueError("values must be 1-d")
    if not 1 <= k <= flat.size:
        raise ValueError("need 1 <= k <= len(values)")
    # stable sort on negated magnitude keeps the lower index first on ties
    order = np.argsort(-np.abs(flat), kind="stable")
    return np.sort(order[:k])


def topk_compress(v, k: int) -> SparsePayload:
    """Per-worker top-k of the logical coordinates, values rounded to fp16."""
    vals = _logical(v)
    idx = topk_indices(vals, k)
    return SparsePayload(idx.astype(np.int32), fp16_round_trip(vals[idx]))


def sparse_to_dense(payload: SparsePayload, logical_len: int) -> np.ndarray:
    out = np.zeros(logical_len, dtype=np.float32)
    out[payload.indices] = payload.values
    return out


def select_chunks(norm_sums: np.ndarray, num: int) -> np.ndarray:
    """Top chunks by aggregated energy, ties to the lower id, ascending ids."""
    return topk_indices(norm_sums, num)


def chunk_values(v, chunk_size: int, chunk_ids: np.ndarray) -> ChunkSetPayload:
    """Extract the selected chunks as one dense fp16-rounded block.

    Positions past the logical length inside the final chunk read as zero.
    """
    vals = _logical(v)
    num_chunks = math.ceil(vals.size / chunk_size)
    ids = np.asarray(chunk_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= num_chunks):
        raise ValueError("chunk id out of range")
    buf = np.zeros(num_chunks * chunk_size, dtype=np.float32)
    buf[: vals.size] = vals
    picked = buf.reshape(num_chunks, chunk_size)[ids].reshape(-1)
    return ChunkSetPayload(ids.astype(np.int32), chunk_size, fp16_round_trip(picked))


def chunkset_to_dense(chunk_ids: np.ndarray, chunk_size: int, values: np.ndarray, logical_len: int) -> np.ndarray:
    """Scatter chunk values back into a dense logical vector."""
    num_chunks = math.ceil(logical_len / chunk_size)
    buf = np.zeros((num_chunks, chunk_size), dtype=np.float32)
    buf[np.asarray(chunk_ids, dtype=np.int64)] = np.asarray(values, dtype=np.float32).reshape(-1, chunk_size)
    return buf.reshape(-1)[:logical_len].copy()


# ---------------------------------------------------------------------------
# Stochastic quantization

_SNAP = 1e-9  # fractional parts this close to the grid round deterministically


def chunk_ranges(values: np.ndarray, block_size: int) -> np.ndarray:
    """Per-block (min, max) of a rotated vector, shape (num_blocks, 2)."""
    vals = np.asarray(values, dtype=np.float32)
    if vals.size % block_size:
        raise ValueError("length must be a multiple of block_size")
    blocks = vals.reshape(-1, block_size)
    return np.stack([blocks.min(axis=1), blocks.max(axis=1)], axis=1)


def quantize_stochastic(
    values: np.ndarray,
    ranges: np.ndarray,
    quant_bits: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """Stochastically round onto the shared per-block grid.

    The grid for a block with shared range (lo, hi) has midpoint
    mu = (lo + hi) / 2 and step delta = (hi - lo) / (2**q - 2); codes live in
    the zero-mean range [-(2**(q-1) - 1), 2**(q-1) - 1]. A value x maps to
    z = floor(t) + Bernoulli(t - floor(t)) with t = (x - mu) / delta, so the
    dequantized mu + z * delta is one of x's two grid neighbours and is
    unbiased. Inputs outside the shared range are clamped first;
    the clamp count is returned for overflow diagnostics. One uniform draw
    per coordinate is consumed from ``rng`` in coordinate order.
    """
    vals = np.asarray(values, dtype=np.float64)
    num_blocks = ranges.shape[0]
    if vals.size % num_blocks:
        raise ValueError("length must be a multiple of the number of blocks")
    block_size = vals.size // num_blocks
    lo = np.repeat(ranges[:, 0].astype(np.float64), block_size)
    hi = np.repeat(ranges[:, 1].astype(np.float64), block_size)
    bound = float((1 << (quant_bits - 1)) - 1)

    clamped = np.clip(vals, lo, hi)
    num_clipped = int(np.count_nonzero(clamped != vals))

    mid = (lo + hi) / 2.0
    step = (hi - lo) / float((1 << quant_bits) - 2)
    degenerate = step <= 0.0
    safe_step = np.where(degenerate, 1.0, step)
    t = np.clip((clamped - mid) / safe_step, -bound, bound)
    low = np.floor(t)
    frac = t - low
    low[frac > 1.0 - _SNAP] += 1.0
    frac = np.where((frac < _SNAP) | (frac > 1.0 - _SNAP), 0.0, frac)
    coin = rng.random(t.size)
    z = (low + (coin < frac)).astype(np.int64)
    z = np.clip(z, -int(bound), int(bound))
    z[degenerate] = 0
    return z.astype(np.int8), num_clipped


def dequantize_sum(
    code_sums: np.ndarray,
    ranges: np.ndarray,
    quant_bits: int,
    num_addends: int,
) -> np.ndarray:
    """Recover the aggregate from summed codes: n * mu + delta * z_sum.

    Works for any addend count, so a single worker's payload decodes with
    ``num_addends=1``. Degenerate blocks (hi == lo) decode to n * mu.
    """
    sums = np.asarray(code_sums, dtype=np.float64)
    num_blocks = ranges.shape[0]
    if sums.size % num_blocks:
        raise ValueError("length must be a multiple of the number of blocks")
    block_size = sums.size // num_blocks
    lo = np.repeat(ranges[:, 0].astype(np.float64), block_size)
    hi = np.repeat(ranges[:, 1].astype(np.float64), block_size)
    mid = (lo + hi) / 2.0
    step = np.where(hi > lo, (hi - lo) / float((1 << quant_bits) - 2), 0.0)
    return (num_addends * mid + step * sums).astype(np.float32)


# ---------------------------------------------------------------------------
# Low-rank factorization

_DEGENERATE_REL = 1e-8


def matrix_shape_for(size: int) -> tuple[int, int]:
    """Most-square (rows, cols) with rows * cols >= size."""
    if size < 1:
        raise ValueError("size must be positive")
    rows = math.isqrt(size)
    if rows * rows < size:
        rows += 1
    cols = math.ceil(size / rows)
    return rows, cols


def to_matrix(flat: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    rows, cols = shape
    arr = np.asarray(flat, dtype=np.float32).reshape(-1)
    if arr.size > rows * cols:
        raise ValueError("flat vector does not fit the shape")
    buf = np.zeros(rows * cols, dtype=np.float32)
    buf[: arr.size] = arr
    return buf.reshape(rows, cols)


def from_matrix(mat: np.ndarray, logical_len: int) -> np.ndarray:
    return np.ascontiguousarray(mat, dtype=np.float32).reshape(-1)[:logical_len].copy()


def orthonormalize(mat: np.ndarray) -> np.ndarray:
    """Column-wise modified Gram-Schmidt, float64 internally.

    Columns whose residual collapses below 1e-8 of the matrix scale (exact
    duplicates, zeros, fp dust from rank-deficient inputs) are replaced by
    the first canonical basis vector with a usable residual, so the result
    always has exactly orthonormal, full-rank columns and is deterministic.
    """
    a = np.asarray(mat, dtype=np.float64).copy()
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ValueError("need a tall matrix (rows >= cols)")
    rows, cols = a.shape
    scale = float(np.linalg.norm(a)) / max(1.0, math.sqrt(cols))
    floor = max(scale * _DEGENERATE_REL, 1e-300)
    for c in range(cols):
        col = a[:, c]
        for prev in range(c):
            col -= (a[:, prev] @ col) * a[:, prev]
        norm = float(np.linalg.norm(col))
        if norm > floor:
            col /= norm
            continue
        for basis in range(rows):
            cand = np.zeros(rows)
            cand[basis] = 1.0
            for prev in range(c):
                cand -= (a[:, prev] @ cand) * a[:, prev]
            norm = float(np.linalg.norm(cand))
            if norm > 0.5:
                a[:, c] = cand / norm
                break
        else:  # cols <= rows guarantees some basis vector sticks out
            raise DegenerateMatrixError("could not complete an orthonormal basis")
    return a.astype(np.float32)


def draw_seed_matrix(cols: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((cols, rank)).astype(np.float32)


def ensure_full_rank(q: np.ndarray, cols: int, rank: int, rng: np.random.Generator, attempts: int = 3) -> np.ndarray:
    """Return a full-column-rank seed matrix, redrawing up to ``attempts`` times."""
    candidate = q
    for remaining in range(attempts, -1, -1):
        if np.linalg.matrix_rank(candidate) == rank:
            return np.ascontiguousarray(candidate, dtype=np.float32)
        if remaining:
            candidate = draw_seed_matrix(cols, rank, rng)
    raise DegenerateMatrixError("seed matrix rank-deficient after redraws")


def powersgd_compress(mat: np.ndarray, rank: int, q: np.ndarray) -> LowRankPayload:
    """One-worker factorization step: P = M Q, orthonormalize, Q' = M^T P_hat."""
    m = np.asarray(mat, dtype=np.float32)
    if q.shape != (m.shape[1], rank):
        raise ValueError("seed matrix shape must be (cols, rank)")
    p_hat = orthonormalize(m @ q)
    q_new = m.T @ p_hat
    return LowRankPayload(p_hat, q_new, m.shape)


def powersgd_decompress(payload: LowRankPayload) -> np.ndarray:
    return payload.left @ payload.right.T


# ---------------------------------------------------------------------------
# Error feedback


def ef_apply(gradient: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Corrected gradient fed to the compressor: input plus carried residual."""
    return (np.asarray(gradient, dtype=np.float32) + residual).astype(np.float32)


def ef_update(corrected: np.ndarray, reconstructed: np.ndarray) -> np.ndarray:
    """New residual: what the worker's own payload failed to represent."""
    return (np.asarray(corrected, dtype=np.float32) - reconstructed).astype(np.float32)


# ---------------------------------------------------------------------------
# Budget solvers


def topk_for_budget(logical_len: int, bits_per_coord: float) -> int:
    """k such that 48k / d best matches the requested bits per coordinate."""
    k = round(bits_per_coord * logical_len / 48.0)
    if not 1 <= k <= logical_len:
        raise ValueError("budget resolves to an unusable k")
    return int(k)


def chunks_for_budget(logical_len: int, chunk_size: int, bits_per_coord: float) -> int:
    """Selected-chunk count whose two-phase traffic best matches the budget.

    Phase totals per coordinate are 16 * (j * chunk_size + num_chunks) / d,
    so j = (b * d / 16 - num_chunks) / chunk_size, rounded.
    """
    num_chunks = math.ceil(logical_len / chunk_size)
    j = round((bits_per_coord * logical_len / 16.0 - num_chunks) / chunk_size)
    if not 1 <= j <= num_chunks:
        raise ValueError("budget resolves to an unusable chunk count")
    return int(j)
