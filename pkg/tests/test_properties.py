"""Property-based invariants for the wire-facing primitives.

Derandomized so the suite itself is reproducible; each property states a
contract that must hold for arbitrary inputs, not just the seeded fixtures
used elsewhere.
"""

import numpy as np
from hypothesis import given, settings, strategies as st

from gradcomp.collectives import FloatSum, WorkerGroup, ring_all_reduce
from gradcomp.compressors import (
    SparsePayload,
    decode_payload,
    dequantize_sum,
    encode_payload,
    quantize_stochastic,
    topk_indices,
)
from gradcomp.vectors import HALF_MAX, fp16_round_trip, pad_to_pow2

SETTINGS = settings(max_examples=60, derandomize=True, deadline=None)

finite_floats = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False, width=32
)


@SETTINGS
@given(st.lists(finite_floats, min_size=1, max_size=40))
def test_fp16_round_trip_is_idempotent_and_bounded(xs):
    arr = np.asarray(xs, dtype=np.float32)
    once = fp16_round_trip(arr)
    assert np.array_equal(fp16_round_trip(once), once)
    assert np.all(np.abs(once) <= HALF_MAX)
    assert np.all(np.isfinite(once))
    # rounding never flips a sign
    assert np.all((once == 0) | (np.sign(once) == np.sign(arr)))


@SETTINGS
@given(st.lists(finite_floats, min_size=2, max_size=2))
def test_fp16_round_trip_is_monotone(pair):
    lo, hi = sorted(pair)
    assert fp16_round_trip(float(lo)) <= fp16_round_trip(float(hi))


@SETTINGS
@given(
    st.lists(st.integers(min_value=-9, max_value=9), min_size=1, max_size=30),
    st.data(),
)
def test_topk_selection_dominates_the_rest(values, data):
    vals = np.asarray(values, dtype=np.float32)
    k = data.draw(st.integers(min_value=1, max_value=vals.size))
    picked = topk_indices(vals, k)
    assert picked.size == k
    assert np.all(np.diff(picked) > 0)
    rest = np.setdiff1d(np.arange(vals.size), picked)
    if rest.size:
        assert np.min(np.abs(vals[picked])) >= np.max(np.abs(vals[rest]))


@SETTINGS
@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=50),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_ring_all_reduce_consensus_and_shape(n, length, seed):
    rng = np.random.default_rng(seed)
    inputs = [rng.standard_normal(length).astype(np.float32) for _ in range(n)]
    outs = ring_all_reduce(inputs, FloatSum(), WorkerGroup(n), element_bits=32)
    assert len(outs) == n
    for out in outs:
        assert out.size == length
        assert np.array_equal(out, outs[0])
    exact = np.sum(np.stack(inputs, dtype=np.float64), axis=0)
    scale = max(float(np.linalg.norm(exact)), 1e-6)
    assert float(np.linalg.norm(outs[0] - exact)) <= 1e-5 * scale + 1e-4


@SETTINGS
@given(
    st.floats(min_value=-100.0, max_value=100.0, allow_nan=False),
    st.floats(min_value=1e-3, max_value=100.0, allow_nan=False),
    st.integers(min_value=2, max_value=8),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_quantizer_error_is_within_one_step(mid, half_width, q, seed):
    lo, hi = mid - half_width, mid + half_width
    ranges = np.array([[lo, hi]])
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo - half_width, hi + half_width, 16)
    codes, clipped = quantize_stochastic(x, ranges, q, rng)
    bound = (1 << (q - 1)) - 1
    assert np.all(np.abs(codes.astype(np.int64)) <= bound)
    assert clipped == int(np.count_nonzero((x < lo) | (x > hi)))
    back = dequantize_sum(codes.astype(np.int64), ranges, q, 1).astype(np.float64)
    step = (hi - lo) / float((1 << q) - 2)
    assert np.all(np.abs(back - np.clip(x, lo, hi)) <= step * (1 + 1e-6) + 1e-6)


@SETTINGS
@given(st.lists(finite_floats, min_size=1, max_size=64))
def test_pad_to_pow2_invariants(xs):
    v = pad_to_pow2(np.asarray(xs, dtype=np.float32))
    assert v.padded_len >= v.logical_len
    assert v.padded_len & (v.padded_len - 1) == 0
    assert np.array_equal(v.logical, np.asarray(xs, dtype=np.float32))
    assert not np.any(v.values[v.logical_len :])


@SETTINGS
@given(
    st.lists(st.integers(min_value=0, max_value=10**6), min_size=0, max_size=20, unique=True),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_sparse_payload_codec_round_trip(indices, seed):
    idx = np.sort(np.asarray(indices, dtype=np.int32))
    vals = fp16_round_trip(
        np.random.default_rng(seed).standard_normal(idx.size).astype(np.float32)
    )
    payload = SparsePayload(idx, vals)
    back = decode_payload(encode_payload(payload))
    assert np.array_equal(back.indices, payload.indices)
    assert np.array_equal(back.values, payload.values)
