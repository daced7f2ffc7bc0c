"""End-to-end compression rounds over the simulated ring.

A :class:`GradientPipeline` owns the cross-round state of one scheme (error
feedback residuals, the warm-started low-rank seed) for a fixed worker group
and dimension. Each :meth:`~GradientPipeline.run_round` call takes the raw
per-worker gradients for one round and returns a :class:`RoundResult` holding
the consensus mean-gradient estimate, the round's traffic ledger, and the
quality/overflow diagnostics. All schemes guarantee that every worker ends
the round holding a bitwise-identical estimate; the tests exercise that by
re-decoding from each worker's own buffers.

Scheme traffic, per worker and round (d = logical dimension):

* ``topk``: one payload of k (index, fp16 value) pairs all-gathered,
  48k bits in, so b = 48k / d.
* ``chunked_topk``: fp16 chunk energies all-reduced (16 bits each), then the
  consensus-selected chunks all-reduced dense in fp16,
  b = 16 (num_chunks + j * chunk_size) / d.
* ``rotated_quant``: fp32 per-block ranges all-reduced (64 bits per block),
  then integer codes all-reduced at the saturating wire width,
  b = (wire_bits * padded_len + 64 * num_blocks) / d.
* ``powersgd``: both fp32 factors all-reduced, b = 32 r (rows + cols) / d;
  below the bypass threshold the round degrades to dense fp32.
* ``dense_fp16`` / ``dense_fp32``: the whole vector, b = 16 or 32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import compressors as comp
from .collectives import (
    ElemMax,
    ElemMin,
    FloatSum,
    SatIntSum,
    TrafficLedger,
    WorkerGroup,
    all_gather,
    ring_all_reduce,
)
from .compressors import (
    ChunkedTopKConfig,
    CompressorConfig,
    DenseConfig,
    PowerSgdConfig,
    RotatedQuantConfig,
    TopKConfig,
    scheme_label,
)
from .metrics import OverflowStats, TimeModel, nmse, overflow_rate, simulated_round_time
from .transforms import RotationSpec, coordinate_permutation, rht_forward, rht_inverse
from .vectors import ChunkGeometry, GradientVector, SeedSpec, chunk_sq_norms, fp16_round_trip


@dataclass(frozen=True)
class RoundResult:
    """Everything one aggregation round produced.

    ``estimate`` is the consensus estimate of the *mean* corrected gradient.
    ``nmse`` measures it against the exact fp32 mean of the post-EF corrected
    inputs. ``input_bits_per_coord`` counts each worker's collective inputs
    (identical across workers); the ledger holds the wire-level traffic.
    """

    scheme: str
    round_index: int
    estimate: GradientVector
    ledger: TrafficLedger
    nmse: float
    input_bits_per_coord: float
    overflow: OverflowStats
    range_clips: int = 0


ROUND_CSV_HEADER = "round,scheme,nmse,bits_per_coord,overflow_rate,simulated_ms"


def round_csv_row(result: RoundResult, model: TimeModel) -> str:
    """One CSV row per the header above; floats via repr for reproducibility."""
    ms = 1000.0 * simulated_round_time(result.ledger, model, result.scheme)
    return ",".join(
        [
            str(result.round_index),
            result.scheme,
            repr(float(result.nmse)),
            repr(float(result.input_bits_per_coord)),
            repr(float(overflow_rate(result.overflow))),
            repr(float(ms)),
        ]
    )


class GradientPipeline:
    """Stateful runner for one compression scheme on one worker group.

    Error feedback is on by default for every lossy scheme except the dense
    baselines; pass ``error_feedback=False`` to study raw one-shot error.
    Residuals live per worker and never cross the wire.
    """

    def __init__(
        self,
        config: CompressorConfig,
        num_workers: int,
        dim: int,
        seeds: SeedSpec,
        error_feedback: bool | None = None,
    ) -> None:
        if num_workers < 1:
            raise ValueError("num_workers must be positive")
        if dim < 1:
            raise ValueError("dim must be positive")
        self.config = config
        self.scheme = scheme_label(config)
        self.group = WorkerGroup(num_workers)
        self.dim = dim
        self.seeds = seeds
        if isinstance(config, DenseConfig):
            if error_feedback:
                raise ValueError("dense baselines do not carry error feedback")
            error_feedback = False
        elif error_feedback is None:
            error_feedback = True
        self.error_feedback = bool(error_feedback)
        self.residuals = (
            [np.zeros(dim, dtype=np.float32) for _ in range(num_workers)]
            if self.error_feedback
            else None
        )
        self._warm_q: np.ndarray | None = None
        self._validate_config()

    def _validate_config(self) -> None:
        cfg, d = self.config, self.dim
        if isinstance(cfg, TopKConfig) and cfg.k > d:
            raise ValueError("k exceeds the dimension")
        if isinstance(cfg, ChunkedTopKConfig):
            if cfg.chunks_selected > ChunkGeometry.for_dim(d, cfg.chunk_size).num_chunks:
                raise ValueError("chunks_selected exceeds the chunk count")

    # -- round entry -------------------------------------------------------

    def run_round(self, worker_grads, round_index: int) -> RoundResult:
        grads = self._checked(worker_grads)
        if self.residuals is not None:
            corrected = [comp.ef_apply(g, r) for g, r in zip(grads, self.residuals)]
        else:
            corrected = grads
        ledger = TrafficLedger()

        cfg = self.config
        if isinstance(cfg, TopKConfig):
            core = self._round_topk(corrected, ledger)
        elif isinstance(cfg, ChunkedTopKConfig):
            core = self._round_chunked(corrected, ledger, round_index)
        elif isinstance(cfg, RotatedQuantConfig):
            core = self._round_quant(corrected, ledger, round_index)
        elif isinstance(cfg, PowerSgdConfig):
            core = self._round_powersgd(corrected, ledger, round_index)
        else:
            core = self._round_dense(corrected, ledger)
        estimate, own, input_bits, overflow, range_clips = core

        if self.residuals is not None:
            for i in range(self.group.size):
                self.residuals[i] = comp.ef_update(corrected[i], own[i])

        reference = np.mean(np.stack(corrected), axis=0, dtype=np.float64)
        return RoundResult(
            scheme=self.scheme,
            round_index=round_index,
            estimate=_as_gradient(estimate, self.dim),
            ledger=ledger,
            nmse=nmse(estimate, reference),
            input_bits_per_coord=input_bits / self.dim,
            overflow=overflow,
            range_clips=range_clips,
        )

    def _checked(self, worker_grads) -> list[np.ndarray]:
        if len(worker_grads) != self.group.size:
            raise ValueError("need exactly one gradient per worker")
        grads = []
        for g in worker_grads:
            arr = np.asarray(
                g.logical if isinstance(g, GradientVector) else g, dtype=np.float32
            )
            if arr.ndim != 1 or arr.size != self.dim:
                raise ValueError("gradient length does not match the pipeline dim")
            if not np.all(np.isfinite(arr)):
                raise ValueError("gradients must be finite")
            grads.append(arr)
        return grads

    # -- scheme cores ------------------------------------------------------

    def _round_topk(self, corrected, ledger):
        cfg: TopKConfig = self.config
        payloads = [comp.topk_compress(c, cfg.k) for c in corrected]
        sizes = [comp.payload_bits(p) for p in payloads]
        views = all_gather(payloads, self.group, bits=sizes, ledger=ledger, phase="sparse-gather")
        estimate = np.zeros(self.dim, dtype=np.float32)
        for p in views[0]:  # worker-id order keeps the fp32 sum deterministic
            np.add.at(estimate, p.indices, p.values)
        estimate /= self.group.size
        own = [comp.sparse_to_dense(p, self.dim) for p in payloads]
        return estimate, own, float(sizes[0]), OverflowStats(), 0

    def _round_chunked(self, corrected, ledger, round_index):
        cfg: ChunkedTopKConfig = self.config
        geom = ChunkGeometry.for_dim(self.dim, cfg.chunk_size)
        perm = (
            coordinate_permutation(self.seeds, round_index, self.dim) if cfg.permute else None
        )
        work = [c[perm] if perm is not None else c for c in corrected]

        norms = [
            fp16_round_trip(chunk_sq_norms(w, geom).astype(np.float32)) for w in work
        ]
        energy = ring_all_reduce(
            norms,
            FloatSum(),
            self.group,
            element_bits=16,
            ledger=ledger,
            phase="norm-consensus",
            wire_round=fp16_round_trip,
        )[0]
        selected = comp.select_chunks(energy, cfg.chunks_selected)

        payloads = [comp.chunk_values(w, cfg.chunk_size, selected) for w in work]
        summed = ring_all_reduce(
            [p.values for p in payloads],
            FloatSum(),
            self.group,
            element_bits=16,
            ledger=ledger,
            phase="chunk-aggregate",
            wire_round=fp16_round_trip,
        )[0]

        est_work = comp.chunkset_to_dense(selected, cfg.chunk_size, summed, self.dim)
        est_work /= self.group.size
        own_work = [
            comp.chunkset_to_dense(selected, cfg.chunk_size, p.values, self.dim)
            for p in payloads
        ]
        if perm is not None:
            estimate = _scatter_back(est_work, perm)
            own = [_scatter_back(o, perm) for o in own_work]
        else:
            estimate, own = est_work, own_work
        input_bits = 16.0 * (geom.num_chunks + cfg.chunks_selected * cfg.chunk_size)
        return estimate, own, input_bits, OverflowStats(), 0

    def _round_quant(self, corrected, ledger, round_index):
        cfg: RotatedQuantConfig = self.config
        spec = RotationSpec.for_round(
            self.seeds, round_index, _next_pow2(self.dim), max_block=cfg.rotation_block
        )
        block = spec.block_size
        rotated = [
            rht_forward(_as_gradient(c, self.dim, padded=spec.padded_len), spec).values
            for c in corrected
        ]

        ranges = [comp.chunk_ranges(r, block) for r in rotated]
        shared_lo = ring_all_reduce(
            [r[:, 0] for r in ranges],
            ElemMin(),
            self.group,
            element_bits=32,
            ledger=ledger,
            phase="range-consensus",
        )[0]
        shared_hi = ring_all_reduce(
            [r[:, 1] for r in ranges],
            ElemMax(),
            self.group,
            element_bits=32,
            ledger=ledger,
            phase="range-consensus",
        )[0]
        shared = np.stack([shared_lo, shared_hi], axis=1)

        codes, range_clips = [], 0
        for i, r in enumerate(rotated):
            z, clipped = comp.quantize_stochastic(
                r, shared, cfg.quant_bits, self.seeds.rng("stochastic-round", round_index, i)
            )
            codes.append(z)
            range_clips += clipped
        op = SatIntSum(cfg.wire_bits)
        code_sums = ring_all_reduce(
            codes,
            op,
            self.group,
            element_bits=cfg.wire_bits,
            ledger=ledger,
            phase="code-aggregate",
        )[0]

        agg = comp.dequantize_sum(code_sums, shared, cfg.quant_bits, self.group.size)
        estimate = (
            rht_inverse(GradientVector(agg, agg.size), spec).values[: self.dim]
            / self.group.size
        )
        own = [
            rht_inverse(
                GradientVector(comp.dequantize_sum(z, shared, cfg.quant_bits, 1), agg.size),
                spec,
            ).values[: self.dim]
            for z in codes
        ]
        sigma = float(np.std(np.concatenate(codes).astype(np.float64)))
        overflow = OverflowStats(op.clip_events, op.total_adds, sigma)
        input_bits = float(cfg.wire_bits * spec.padded_len + 64 * shared.shape[0])
        return estimate, own, input_bits, overflow, range_clips

    def _round_powersgd(self, corrected, ledger, round_index):
        cfg: PowerSgdConfig = self.config
        if self.dim < cfg.bypass_below:
            summed = ring_all_reduce(
                corrected,
                FloatSum(),
                self.group,
                element_bits=32,
                ledger=ledger,
                phase="dense-bypass",
            )[0]
            estimate = summed / self.group.size
            return estimate, list(corrected), 32.0 * self.dim, OverflowStats(), 0

        shape = comp.matrix_shape_for(self.dim)
        rows, cols = shape
        mats = [comp.to_matrix(c, shape) for c in corrected]
        shared_rng = self.seeds.rng("lowrank-seed", round_index)
        if cfg.warm_start and self._warm_q is not None:
            seed_q = self._warm_q
        else:
            seed_q = comp.draw_seed_matrix(cols, cfg.rank, shared_rng)
        seed_q = comp.ensure_full_rank(seed_q, cols, cfg.rank, shared_rng)

        lefts = [(m @ seed_q).reshape(-1) for m in mats]
        left_sum = ring_all_reduce(
            lefts, FloatSum(), self.group, element_bits=32, ledger=ledger, phase="left-factor"
        )[0]
        p_hat = comp.orthonormalize(left_sum.reshape(rows, cfg.rank))

        rights = [m.T @ p_hat for m in mats]
        own = [comp.from_matrix(p_hat @ r.T, self.dim) for r in rights]
        right_sum = ring_all_reduce(
            [r.reshape(-1) for r in rights],
            FloatSum(),
            self.group,
            element_bits=32,
            ledger=ledger,
            phase="right-factor",
        )[0].reshape(cols, cfg.rank)

        estimate = comp.from_matrix(p_hat @ right_sum.T, self.dim) / self.group.size
        self._warm_q = (right_sum / self.group.size).astype(np.float32)
        input_bits = 32.0 * cfg.rank * (rows + cols)
        return estimate, own, input_bits, OverflowStats(), 0

    def _round_dense(self, corrected, ledger):
        cfg: DenseConfig = self.config
        if cfg.bits == 16:
            inputs = [fp16_round_trip(c) for c in corrected]
            summed = ring_all_reduce(
                inputs,
                FloatSum(),
                self.group,
                element_bits=16,
                ledger=ledger,
                phase="dense",
                wire_round=fp16_round_trip,
            )[0]
        else:
            summed = ring_all_reduce(
                corrected,
                FloatSum(),
                self.group,
                element_bits=32,
                ledger=ledger,
                phase="dense",
            )[0]
        estimate = summed / self.group.size
        return estimate, list(corrected), float(cfg.bits) * self.dim, OverflowStats(), 0


# ---------------------------------------------------------------------------
# helpers and one-shot wrappers


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def _as_gradient(values: np.ndarray, logical_len: int, padded: int | None = None) -> GradientVector:
    arr = np.asarray(values, dtype=np.float32)
    size = padded if padded is not None else _next_pow2(arr.size)
    buf = np.zeros(size, dtype=np.float32)
    buf[: arr.size] = arr
    return GradientVector(buf, logical_len)


def _scatter_back(permuted: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.zeros_like(permuted)
    out[perm] = permuted
    return out


def make_pipeline(
    config: CompressorConfig,
    num_workers: int,
    dim: int,
    seeds: SeedSpec,
    error_feedback: bool | None = None,
) -> GradientPipeline:
    return GradientPipeline(config, num_workers, dim, seeds, error_feedback)


def _one_shot(config, worker_grads, seeds, round_index, residuals, error_feedback=None):
    dim = int(np.asarray(worker_grads[0]).size)
    if residuals is not None and error_feedback is None:
        error_feedback = True
    pipe = GradientPipeline(config, len(worker_grads), dim, seeds, error_feedback)
    if residuals is not None:
        if len(residuals) != len(worker_grads):
            raise ValueError("need one residual per worker")
        pipe.residuals = residuals
    result = pipe.run_round(worker_grads, round_index)
    if residuals is not None:
        residuals[:] = pipe.residuals
    return result


def run_topk_round(worker_grads, k, seeds, *, round_index=0, residuals=None):
    """One top-k round; ``residuals`` (list of arrays) is updated in place."""
    return _one_shot(TopKConfig(k), worker_grads, seeds, round_index, residuals)


def run_chunked_topk_round(
    worker_grads, chunk_size, chunks_selected, seeds, *, round_index=0, residuals=None, permute=False
):
    """One consensus-chunk round; ``residuals`` is updated in place."""
    cfg = ChunkedTopKConfig(chunk_size, chunks_selected, permute)
    return _one_shot(cfg, worker_grads, seeds, round_index, residuals)


def run_rotated_quant_round(
    worker_grads, config: RotatedQuantConfig, seeds, *, round_index=0, residuals=None
):
    """One rotate-quantize-saturate round; ``residuals`` is updated in place."""
    return _one_shot(config, worker_grads, seeds, round_index, residuals)


def run_powersgd_round(
    worker_grads, config: PowerSgdConfig, seeds, *, round_index=0, residuals=None
):
    """One low-rank round with a fresh seed matrix (no warm start across calls)."""
    return _one_shot(config, worker_grads, seeds, round_index, residuals)


def run_dense_round(worker_grads, bits, seeds, *, round_index=0):
    """One uncompressed baseline round at the given wire width."""
    return _one_shot(DenseConfig(bits), worker_grads, seeds, round_index, None, error_feedback=False)
