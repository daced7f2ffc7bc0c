"""Gradient compression schemes over a deterministic simulated all-reduce.

The package layers as: :mod:`~gradcomp.vectors` (buffers, seeding, wire
rounding) and :mod:`~gradcomp.transforms` (rotations, permutations) feed
:mod:`~gradcomp.compressors` (per-worker codecs) and
:mod:`~gradcomp.collectives` (the simulated ring and its traffic ledger);
:mod:`~gradcomp.pipelines` composes them into full aggregation rounds scored
by :mod:`~gradcomp.metrics`; :mod:`~gradcomp.trainbench` drives the
data-parallel training benchmark; :mod:`~gradcomp.cli` wraps everything for
the command line.
"""

__version__ = "0.1.0"

from .collectives import TrafficLedger, WorkerGroup, all_gather, ring_all_reduce, sat_add
from .compressors import (
    ChunkedTopKConfig,
    ChunkSetPayload,
    DenseConfig,
    DensePayload,
    DegenerateMatrixError,
    LowRankPayload,
    PowerSgdConfig,
    QuantPayload,
    RotatedQuantConfig,
    SparsePayload,
    TopKConfig,
    decode_payload,
    encode_payload,
    payload_bits,
    scheme_label,
)
from .metrics import OverflowStats, TimeModel, nmse, overflow_rate, simulated_round_time, topk_of_sum
from .pipelines import GradientPipeline, RoundResult, make_pipeline
from .trainbench import (
    DatasetSpec,
    SyntheticGradSpec,
    TrainConfig,
    TtaCurve,
    rolling_average,
    run_tta_study,
)
from .transforms import RotationSpec, rht_forward, rht_inverse
from .vectors import (
    ChunkGeometry,
    GradientVector,
    SeedSpec,
    chunk_sq_norms,
    fp16_round_trip,
    pad_to_pow2,
)

__all__ = [
    "__version__",
    "ChunkGeometry",
    "ChunkSetPayload",
    "ChunkedTopKConfig",
    "DatasetSpec",
    "DegenerateMatrixError",
    "DenseConfig",
    "DensePayload",
    "GradientPipeline",
    "GradientVector",
    "LowRankPayload",
    "OverflowStats",
    "PowerSgdConfig",
    "QuantPayload",
    "RotatedQuantConfig",
    "RotationSpec",
    "RoundResult",
    "SeedSpec",
    "SparsePayload",
    "SyntheticGradSpec",
    "TimeModel",
    "TopKConfig",
    "TrafficLedger",
    "TrainConfig",
    "TtaCurve",
    "WorkerGroup",
    "all_gather",
    "chunk_sq_norms",
    "decode_payload",
    "encode_payload",
    "fp16_round_trip",
    "make_pipeline",
    "nmse",
    "overflow_rate",
    "pad_to_pow2",
    "payload_bits",
    "rht_forward",
    "rht_inverse",
    "ring_all_reduce",
    "rolling_average",
    "run_tta_study",
    "sat_add",
    "scheme_label",
    "simulated_round_time",
    "topk_of_sum",
]
