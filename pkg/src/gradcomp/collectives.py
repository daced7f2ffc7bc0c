"""Deterministic single-process simulation of ring collectives.

The ring all-reduce is the standard two-phase schedule: a reduce-scatter in
which block j starts at worker j and accumulates hop by hop around the ring,
then an all-gather that circulates each finished block. Every transmitted
partial crosses the simulated wire, so when a wire format is given (e.g.
fp16) it is applied per hop, including to the finished block; all workers
therefore store bitwise-identical results, and for FloatSum the result equals
left-to-right summation in ring order starting from the block's owner.

Traffic is metered per (phase, worker) in bits. Each hop charges
``block_elements * element_bits`` to the sender's egress and the receiver's
ingress, over the length padded up to a multiple of the group size, giving
the closed form egress = 2 * (n - 1) * (padded_len / n) * element_bits per
worker and round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WorkerGroup:
    """A set of simulated workers arranged in a ring in id order."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("group size must be positive")


class TrafficLedger:
    """Bit counts per (phase, worker), split into sent and received."""

    def __init__(self) -> None:
        self._cells: dict[tuple[str, int], list[int]] = {}

    def add(self, phase: str, worker: int, *, sent: int = 0, received: int = 0) -> None:
        if sent < 0 or received < 0:
            raise ValueError("bit counts must be non-negative")
        cell = self._cells.setdefault((phase, worker), [0, 0])
        cell[0] += sent
        cell[1] += received

    def bits_sent(self, worker: int | None = None, phase: str | None = None) -> int:
        return self._total(0, worker, phase)

    def bits_received(self, worker: int | None = None, phase: str | None = None) -> int:
        return self._total(1, worker, phase)

    def _total(self, slot: int, worker: int | None, phase: str | None) -> int:
        total = 0
        for (ph, w), cell in self._cells.items():
            if worker is not None and w != worker:
                continue
            if phase is not None and ph != phase:
                continue
            total += cell[slot]
        return total

    def workers(self) -> list[int]:
        return sorted({w for _, w in self._cells})

    def phases(self) -> list[str]:
        return sorted({ph for ph, _ in self._cells})

    def max_egress_bits(self) -> int:
        """Worst per-worker egress; the quantity a bandwidth model divides by."""
        workers = self.workers()
        if not workers:
            return 0
        return max(self.bits_sent(worker=w) for w in workers)

    def merge(self, other: "TrafficLedger") -> None:
        for (ph, w), cell in other._cells.items():
            self.add(ph, w, sent=cell[0], received=cell[1])

    def to_csv(self) -> str:
        """Rows sorted by (phase, worker): ``phase,worker,bits_sent,bits_received``."""
        lines = ["phase,worker,bits_sent,bits_received"]
        for (ph, w) in sorted(self._cells):
            sent, received = self._cells[(ph, w)]
            lines.append(f"{ph},{w},{sent},{received}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Reduce operators


def sat_add(x, y, bits: int):
    """Saturating signed add on the zero-mean b-bit range.

    Sums clamp into [-(2**(b-1) - 1), 2**(b-1) - 1]; the range is symmetric,
    so the most negative two's-complement word is never produced.
    """
    if not 2 <= bits <= 64:
        raise ValueError("bits must be in [2, 64]")
    hi = (1 << (bits - 1)) - 1
    s = np.asarray(x, dtype=np.int64) + np.asarray(y, dtype=np.int64)
    clipped = np.clip(s, -hi, hi)
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        return int(clipped)
    return clipped


class FloatSum:
    """Float32 addition; the wire format, if any, is applied per hop outside."""

    acc_dtype = np.float32
    neutral = 0.0
    default_element_bits = 32

    def combine(self, incoming: np.ndarray, own: np.ndarray) -> np.ndarray:
        return (incoming + own).astype(np.float32)


class SatIntSum:
    """Saturating integer addition; clip events are counted per instance."""

    acc_dtype = np.int64
    neutral = 0

    def __init__(self, bits: int) -> None:
        if not 2 <= bits <= 32:
            raise ValueError("bits must be in [2, 32]")
        self.bits = bits
        self.default_element_bits = bits
        self.clip_events = 0
        self.total_adds = 0

    def combine(self, incoming: np.ndarray, own: np.ndarray) -> np.ndarray:
        hi = (1 << (self.bits - 1)) - 1
        s = incoming + own
        clipped = np.clip(s, -hi, hi)
        self.clip_events += int(np.count_nonzero(clipped != s))
        self.total_adds += int(s.size)
        return clipped


class ElemMin:
    acc_dtype = np.float32
    neutral = np.inf
    default_element_bits = 32

    def combine(self, incoming: np.ndarray, own: np.ndarray) -> np.ndarray:
        return np.minimum(incoming, own)


class ElemMax:
    acc_dtype = np.float32
    neutral = -np.inf
    default_element_bits = 32

    def combine(self, incoming: np.ndarray, own: np.ndarray) -> np.ndarray:
        return np.maximum(incoming, own)


# ---------------------------------------------------------------------------
# Collectives


def _as_buffers(inputs, op, padded: int):
    bufs = []
    for x in inputs:
        buf = np.full(padded, op.neutral, dtype=op.acc_dtype)
        buf[: np.asarray(x).size] = x
        bufs.append(buf)
    return bufs


def ring_all_reduce(
    inputs,
    op,
    group: WorkerGroup,
    *,
    element_bits: int | None = None,
    ledger: TrafficLedger | None = None,
    phase: str = "ring",
    wire_round=None,
):
    """Reduce ``inputs`` (one 1-d array per worker) over a simulated ring.

    Returns one array per worker; all are bitwise identical. Lengths must
    match across workers. The buffers are padded with the op's neutral
    element up to a multiple of the group size; ledger charges cover the
    padded length. ``wire_round`` (e.g. ``fp16_round_trip``) is applied to
    every transmitted partial, modelling a narrow wire with wider local
    accumulation. A group of one returns a copy of its input untouched,
    since nothing crosses a wire.
    """
    n = group.size
    if len(inputs) != n:
        raise ValueError("need exactly one input per worker")
    length = int(np.asarray(inputs[0]).size)
    for x in inputs:
        if np.asarray(x).ndim != 1 or np.asarray(x).size != length:
            raise ValueError("inputs must be 1-d and equal length")
    if element_bits is None:
        element_bits = op.default_element_bits
    if n == 1:
        return [np.array(inputs[0], dtype=op.acc_dtype, copy=True)]

    padded = math.ceil(length / n) * n
    block = padded // n
    block_bits = block * element_bits
    bufs = _as_buffers(inputs, op, padded)
    outs = [np.empty(padded, dtype=op.acc_dtype) for _ in range(n)]

    for j in range(n):  # block j is owned by worker j
        sl = slice(j * block, (j + 1) * block)
        acc = bufs[j][sl].copy()
        for step in range(1, n):
            sender = (j + step - 1) % n
            receiver = (j + step) % n
            payload = acc if wire_round is None else wire_round(acc)
            if ledger is not None:
                ledger.add(phase, sender, sent=block_bits)
                ledger.add(phase, receiver, received=block_bits)
            acc = op.combine(payload, bufs[receiver][sl])
        final = acc if wire_round is None else wire_round(acc)
        last = (j + n - 1) % n
        for step in range(1, n):
            sender = (last + step - 1) % n
            receiver = (last + step) % n
            if ledger is not None:
                ledger.add(phase, sender, sent=block_bits)
                ledger.add(phase, receiver, received=block_bits)
        for out in outs:
            out[sl] = final
    return [out[:length] for out in outs]


def all_gather(
    payloads,
    group: WorkerGroup,
    *,
    bits,
    ledger: TrafficLedger | None = None,
    phase: str = "gather",
):
    """Give every worker the full payload list, in worker-id order.

    ``bits`` is the per-worker payload size used for accounting: each worker
    sends its own payload to the n - 1 others and receives everyone else's.
    Payload objects are immutable, so workers share references.
    """
    n = group.size
    if len(payloads) != n:
        raise ValueError("need exactly one payload per worker")
    sizes = [int(b) for b in bits]
    if len(sizes) != n:
        raise ValueError("need one bit size per payload")
    if ledger is not None and n > 1:
        total = sum(sizes)
        for w in range(n):
            ledger.add(phase, w, sent=(n - 1) * sizes[w], received=total - sizes[w])
    return [list(payloads) for _ in range(n)]
