"""A small time-to-accuracy run: does cheaper traffic buy faster learning?

Four workers train a two-layer net on an xor-layout cluster task under a
bandwidth-bound time model. The compressed scheme loses a little accuracy
per round but ships a fraction of the bits, so its simulated clock reaches
the target first.
"""

import numpy as np

from gradcomp import (
    ChunkedTopKConfig,
    DatasetSpec,
    DenseConfig,
    SeedSpec,
    TimeModel,
    TrainConfig,
    run_tta_study,
)
from gradcomp.compressors import chunks_for_budget
from gradcomp.trainbench import TwoLayerNet, make_cluster_dataset

TARGET = 0.90


def main() -> None:
    seeds = SeedSpec(3001)
    model = TwoLayerNet(64, 48)
    data = make_cluster_dataset(
        DatasetSpec(64, 4096, 2048, separation=4.0, layout="xor"), seeds
    )
    cfg = TrainConfig(
        num_workers=4, batch_size=16, lr=0.05, momentum=0.9,
        max_rounds=400, smoothing_window=25, early_stop=None,
    )
    time_model = TimeModel(bandwidth_bits_per_s=2e7, compute_s_per_round=0.015)

    schemes = {
        "dense_fp32": DenseConfig(32),
        "dense_fp16": DenseConfig(16),
        "chunked_2bit": ChunkedTopKConfig(64, chunks_for_budget(model.dim, 64, 2.0)),
    }
    curves = run_tta_study(schemes, model, data, cfg, time_model, seeds)

    print(f"model dim {model.dim}, {cfg.max_rounds} rounds, target accuracy {TARGET}\n")
    print(f"{'scheme':>14} {'s/round':>8} {'final acc':>10} {'t to target':>12}")
    for label, curve in curves.items():
        per_round = float(np.diff(curve.sim_seconds).mean())
        t = curve.time_to(TARGET)
        reached = f"{t:10.1f}s" if t is not None else "   never"
        print(f"{label:>14} {per_round:>8.3f} {curve.final_metric():>10.3f} {reached:>12}")

    t_dense = curves["dense_fp32"].time_to(TARGET)
    t_chunk = curves["chunked_2bit"].time_to(TARGET)
    if t_dense and t_chunk:
        print(f"\ncompressed reaches {TARGET:.0%} accuracy {t_dense / t_chunk:.1f}x sooner on the simulated clock")


if __name__ == "__main__":
    main()
