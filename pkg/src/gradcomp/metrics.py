"""Estimate quality, overflow diagnostics, and the simulated cost model."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .collectives import TrafficLedger
from .vectors import GradientVector


def _logical(x) -> np.ndarray:
    if isinstance(x, GradientVector):
        return x.logical
    return np.asarray(x)


def nmse(estimate, reference) -> float:
    """Normalized mean squared error over logical coordinates.

    ||est - ref||^2 / ||ref||^2 in float64. Zero reference: returns 0.0 when
    the estimate is also zero (perfect), inf otherwise.
    """
    est = _logical(estimate).astype(np.float64)
    ref = _logical(reference).astype(np.float64)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    denom = float(ref @ ref)
    err = est - ref
    num = float(err @ err)
    if denom == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / denom


@dataclass(frozen=True)
class OverflowStats:
    """Saturation diagnostics for one round of integer aggregation."""

    clip_events: int = 0
    total_adds: int = 0
    code_sigma: float = float("nan")


def overflow_rate(stats: OverflowStats) -> float:
    """Fraction of element-wise saturating adds that clipped (0.0 if none ran)."""
    if stats.total_adds == 0:
        return 0.0
    return stats.clip_events / stats.total_adds


@dataclass(frozen=True)
class TimeModel:
    """Per-round wall-clock model for the simulated cluster.

    time = compute_s_per_round + compression_s[scheme] + max_egress / bandwidth

    ``compression_s`` values are fixed constants from the experiment config;
    nothing here reads a clock, so simulated timelines are reproducible.
    """

    bandwidth_bits_per_s: float
    compute_s_per_round: float = 0.0
    compression_s: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.bandwidth_bits_per_s <= 0:
            raise ValueError("bandwidth must be positive")
        if self.compute_s_per_round < 0:
            raise ValueError("compute time must be non-negative")


def simulated_round_time(ledger: TrafficLedger, model: TimeModel, scheme: str) -> float:
    """Seconds one round takes under the model: compute + compression + wire."""
    wire = ledger.max_egress_bits() / model.bandwidth_bits_per_s
    return model.compute_s_per_round + float(model.compression_s.get(scheme, 0.0)) + wire


def topk_of_sum(worker_grads, k: int) -> np.ndarray:
    """Offline oracle: top-k support of the exact summed gradient.

    No distributed scheme can see this sum before compressing, which is what
    makes it a useful upper bound for sparsifier comparisons.
    """
    from .compressors import topk_indices

    total = np.zeros_like(_logical(worker_grads[0]), dtype=np.float64)
    for g in worker_grads:
        total += _logical(g).astype(np.float64)
    return topk_indices(total, k)


def measure_compression_seconds(fn, *, repeats: int = 5) -> float:
    """Median wall-clock seconds of ``fn()`` over ``repeats`` runs.

    Opt-in helper for calibrating TimeModel.compression_s on real hardware.
    Never called by the pipelines themselves; simulated timelines must not
    depend on the host machine.
    """
    if repeats < 1:
        raise ValueError("repeats must be positive")
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    samples.sort()
    return samples[len(samples) // 2]
