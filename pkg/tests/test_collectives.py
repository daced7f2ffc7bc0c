"""Simulated collectives against sequential fold oracles and exact accounting."""

import numpy as np
import pytest

from gradcomp.collectives import (
    ElemMax,
    ElemMin,
    FloatSum,
    SatIntSum,
    TrafficLedger,
    WorkerGroup,
    all_gather,
    ring_all_reduce,
    sat_add,
)
from gradcomp.vectors import fp16_round_trip


def ring_fold_oracle(inputs, combine, n, length, wire=None, neutral=0.0):
    """Reference semantics: block j starts at worker j and folds in ring order,
    with the wire applied to every transmitted partial and to the final value."""
    padded = -(-length // n) * n
    block = padded // n
    bufs = []
    for x in inputs:
        buf = np.full(padded, neutral, dtype=np.float64 if wire else np.int64)
        buf[:length] = x
        bufs.append(buf)
    out = np.empty(padded, dtype=bufs[0].dtype)
    for j in range(n):
        sl = slice(j * block, (j + 1) * block)
        acc = bufs[j][sl].copy()
        for step in range(1, n):
            sent = wire(acc) if wire else acc
            acc = combine(sent, bufs[(j + step) % n][sl])
        out[sl] = wire(acc) if wire else acc
    return out[:length]


def test_float_ring_matches_fold_oracle():
    rng = np.random.default_rng(0)
    for n, length in ((2, 8), (3, 10), (4, 64), (5, 33)):
        inputs = [rng.standard_normal(length).astype(np.float32) for _ in range(n)]
        got = ring_all_reduce(inputs, FloatSum(), WorkerGroup(n), element_bits=32)
        expect = ring_fold_oracle(
            inputs,
            lambda sent, own: (sent.astype(np.float32) + own.astype(np.float32)).astype(np.float32),
            n,
            length,
            wire=lambda a: a,
        ).astype(np.float32)
        assert np.array_equal(got[0], expect)
        assert all(np.array_equal(got[0], o) for o in got)
        assert got[0].size == length


def test_fp16_wire_ring_matches_fold_oracle():
    rng = np.random.default_rng(1)
    n, length = 4, 50
    inputs = [fp16_round_trip(rng.standard_normal(length).astype(np.float32)) for _ in range(n)]
    got = ring_all_reduce(
        inputs, FloatSum(), WorkerGroup(n), element_bits=16, wire_round=fp16_round_trip
    )[0]
    expect = ring_fold_oracle(
        inputs,
        lambda sent, own: (sent.astype(np.float32) + own.astype(np.float32)).astype(np.float32),
        n,
        length,
        wire=lambda a: fp16_round_trip(a.astype(np.float32)),
    ).astype(np.float32)
    assert np.array_equal(got, expect)
    # every value a worker ends up holding is a half-precision number
    assert np.array_equal(got, fp16_round_trip(got))


def test_saturating_ring_matches_fold_oracle():
    rng = np.random.default_rng(2)
    n, length, bits = 4, 40, 4
    hi = (1 << (bits - 1)) - 1
    inputs = [rng.integers(-hi, hi + 1, length) for _ in range(n)]
    op = SatIntSum(bits)
    got = ring_all_reduce(inputs, op, WorkerGroup(n), element_bits=bits)[0]
    expect = ring_fold_oracle(
        inputs,
        lambda sent, own: np.clip(sent + own, -hi, hi),
        n,
        length,
        neutral=0,
    )
    assert np.array_equal(got, expect)
    assert op.total_adds == (n - 1) * 40  # one combine per hop per element
    assert op.clip_events == int(
        sum(np.count_nonzero(np.clip(s, -hi, hi) != s) for s in _partials(inputs, n, hi))
    )


def _partials(inputs, n, hi):
    """Raw (pre-clip) sums formed at each combine, for clip-event counting."""
    length = inputs[0].size
    padded = -(-length // n) * n
    block = padded // n
    bufs = []
    for x in inputs:
        buf = np.zeros(padded, dtype=np.int64)
        buf[:length] = x
        bufs.append(buf)
    sums = []
    for j in range(n):
        sl = slice(j * block, (j + 1) * block)
        acc = bufs[j][sl].copy()
        for step in range(1, n):
            raw = acc + bufs[(j + step) % n][sl]
            sums.append(raw)
            acc = np.clip(raw, -hi, hi)
    return sums


def test_min_max_rings_are_exact():
    rng = np.random.default_rng(3)
    inputs = [rng.standard_normal(17).astype(np.float32) for _ in range(3)]
    lo = ring_all_reduce(inputs, ElemMin(), WorkerGroup(3), element_bits=32)[0]
    hi = ring_all_reduce(inputs, ElemMax(), WorkerGroup(3), element_bits=32)[0]
    assert np.array_equal(lo, np.stack(inputs).min(axis=0))
    assert np.array_equal(hi, np.stack(inputs).max(axis=0))


def test_single_worker_ring_is_a_copy():
    x = np.arange(5, dtype=np.float32)
    out = ring_all_reduce([x], FloatSum(), WorkerGroup(1), element_bits=32)
    assert np.array_equal(out[0], x)
    out[0][0] = 99.0
    assert x[0] == 0.0  # the input was not aliased


def test_ring_validates_inputs():
    g = WorkerGroup(2)
    with pytest.raises(ValueError):
        ring_all_reduce([np.ones(4)], FloatSum(), g)
    with pytest.raises(ValueError):
        ring_all_reduce([np.ones(4), np.ones(5)], FloatSum(), g)
    with pytest.raises(ValueError):
        WorkerGroup(0)


def test_ring_ledger_closed_form():
    # egress per worker is 2 (n-1) (padded/n) element_bits, and the ring is
    # balanced: every worker receives exactly what it sends
    for n, length, bits in ((4, 1024, 32), (4, 10, 16), (3, 7, 4)):
        ledger = TrafficLedger()
        inputs = [np.zeros(length, dtype=np.float32) for _ in range(n)]
        ring_all_reduce(
            inputs, FloatSum(), WorkerGroup(n), element_bits=bits, ledger=ledger, phase="p"
        )
        padded = -(-length // n) * n
        expect = 2 * (n - 1) * (padded // n) * bits
        for w in range(n):
            assert ledger.bits_sent(worker=w) == expect
            assert ledger.bits_received(worker=w) == expect


def test_all_gather_shares_payloads_and_charges():
    payloads = [object() for _ in range(3)]
    sizes = [10, 20, 30]
    ledger = TrafficLedger()
    views = all_gather(payloads, WorkerGroup(3), bits=sizes, ledger=ledger)
    assert len(views) == 3
    for view in views:
        assert view == payloads  # same objects, worker-id order
    for w in range(3):
        assert ledger.bits_sent(worker=w) == 2 * sizes[w]
        assert ledger.bits_received(worker=w) == sum(sizes) - sizes[w]
    with pytest.raises(ValueError):
        all_gather(payloads, WorkerGroup(2), bits=sizes[:2])


def test_single_worker_gather_is_free():
    ledger = TrafficLedger()
    all_gather([object()], WorkerGroup(1), bits=[100], ledger=ledger)
    assert ledger.bits_sent() == 0


def test_sat_add_scalars_and_arrays():
    assert sat_add(100, 100, 8) == 127
    assert sat_add(-100, -100, 8) == -127
    assert sat_add(3, 4, 8) == 7
    assert isinstance(sat_add(1, 2, 8), int)
    arr = sat_add(np.array([120, -120]), np.array([120, -120]), 8)
    assert arr.tolist() == [127, -127]
    with pytest.raises(ValueError):
        sat_add(1, 1, 1)


def test_sat_int_sum_validation_and_counters():
    with pytest.raises(ValueError):
        SatIntSum(1)
    with pytest.raises(ValueError):
        SatIntSum(33)
    op = SatIntSum(4)
    out = op.combine(np.array([7, 0]), np.array([7, 1]))
    assert out.tolist() == [7, 1]
    assert op.clip_events == 1
    assert op.total_adds == 2


def test_traffic_ledger_bookkeeping():
    ledger = TrafficLedger()
    ledger.add("a", 0, sent=10)
    ledger.add("a", 1, received=10)
    ledger.add("b", 0, sent=5, received=2)
    assert ledger.bits_sent() == 15
    assert ledger.bits_sent(worker=0) == 15
    assert ledger.bits_sent(worker=0, phase="a") == 10
    assert ledger.bits_received(worker=1) == 10
    assert ledger.phases() == ["a", "b"]
    assert ledger.workers() == [0, 1]
    assert ledger.max_egress_bits() == 15

    other = TrafficLedger()
    other.add("a", 0, sent=1)
    ledger.merge(other)
    assert ledger.bits_sent(worker=0, phase="a") == 11

    csv = ledger.to_csv()
    assert csv == (
        "phase,worker,bits_sent,bits_received\n"
        "a,0,11,0\n"
        "a,1,0,10\n"
        "b,0,5,2\n"
    )
    with pytest.raises(ValueError):
        ledger.add("a", 0, sent=-1)
    assert TrafficLedger().max_egress_bits() == 0
