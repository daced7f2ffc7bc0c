# Low-rank factorization cost/quality trade-off. The gradient is reshaped to
# a near-square matrix and approximated as an orthonormal left factor times a
# dense right factor, so the wire carries 32 * rank * (rows + cols) bits no
# matter how large the product is. On a gradient whose shared structure is
# genuinely low rank, error collapses once the rank clears the signal; past
# that the extra columns only buy back worker noise.

import numpy as np

from gradcomp import PowerSgdConfig, SeedSpec
from gradcomp.pipelines import make_pipeline

ROWS = COLS = 128
TRUE_RANK = 6
WORKERS = 4


def main() -> None:
    seeds = SeedSpec(42)
    rng = seeds.rng("grad-shared")
    left = rng.standard_normal((ROWS, TRUE_RANK))
    right = rng.standard_normal((TRUE_RANK, COLS))
    shared = left @ right
    grads = [
        (shared + 0.02 * rng.standard_normal((ROWS, COLS))).astype(np.float32).reshape(-1)
        for _ in range(WORKERS)
    ]
    dim = ROWS * COLS

    print(f"{ROWS}x{COLS} gradients sharing a rank-{TRUE_RANK} signal, {WORKERS} workers\n")
    print(f"{'rank':>5} {'bits/coord':>11} {'nmse':>12}")
    for rank in (1, 2, 4, 6, 8, 16):
        pipe = make_pipeline(PowerSgdConfig(rank, bypass_below=0), WORKERS, dim, seeds)
        result = pipe.run_round(grads, 0)
        print(f"{rank:>5} {result.input_bits_per_coord:>11.2f} {result.nmse:>12.8f}")

    # error feedback turns the per-round bias into a delayed signal: the sum
    # of estimates tracks the sum of true means even at rank 2
    exact = np.mean(np.stack(grads, dtype=np.float64), axis=0)
    print("\ncumulative error of the running estimate at rank 2, same inputs:")
    print(f"{'round':>6} {'with EF':>10} {'without':>10}")
    acc = {}
    for tag, use_ef in (("with EF", True), ("without", False)):
        pipe = make_pipeline(PowerSgdConfig(2, bypass_below=0), WORKERS, dim, seeds, use_ef)
        total = np.zeros(dim)
        log = []
        for r in range(8):
            total += pipe.run_round(grads, r).estimate.logical
            truth = (r + 1) * exact
            log.append(float(np.linalg.norm(total - truth) / np.linalg.norm(truth)))
        acc[tag] = log
    for r in range(8):
        print(f"{r:>6} {acc['with EF'][r]:>10.4f} {acc['without'][r]:>10.4f}")
    print("\nthe uncaptured subspace accumulates in the residual and ships later;")
    print("without feedback the same bias repeats forever")


if __name__ == "__main__":
    main()
