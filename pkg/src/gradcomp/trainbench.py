"""Synthetic gradient streams and a small data-parallel training benchmark.

The benchmark trains tiny numpy models (logistic regression, one-hidden-layer
tanh net) on synthetic Gaussian cluster data, aggregating per-worker
minibatch gradients through a :class:`~gradcomp.pipelines.GradientPipeline`,
and reports validation-metric curves against *simulated* wall-clock time from
the round ledgers and a :class:`~gradcomp.metrics.TimeModel`. Everything is
driven by SeedSpec streams, so runs are bitwise reproducible and the batch
schedule of any (round, worker) can be reconstructed offline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .metrics import TimeModel
from .pipelines import GradientPipeline
from .vectors import SeedSpec

# ---------------------------------------------------------------------------
# Synthetic correlated gradients


@dataclass(frozen=True)
class SyntheticGradSpec:
    """Knobs of the synthetic gradient generator.

    Coordinates carry a shared magnitude envelope that is the absolute value
    of an AR(1) Gaussian with coefficient ``rho`` (unit stationary variance),
    so large-magnitude coordinates arrive in runs. Spikes model hot parameter
    regions such as active embedding rows: coordinates are grouped into
    aligned rows whose width is the locality scale 1/(1 - rho) rounded to a
    power of two (width one at rho = 0, so hot coordinates are i.i.d. there),
    each row is hot with probability ``spike_density``, and the envelope is
    lifted by ``spike_boost`` across hot rows, giving plateaus of uniformly
    large magnitude. The envelope, hot rows, and signs persist across rounds
    the way hot parameter regions persist across training steps; a shared
    dense Gaussian field of scale ``noise_sigma``, redrawn every round, fills
    in the background. Worker gradients add a private per-round copy of the
    same structure scaled by ``divergence``; at divergence zero all workers
    produce bitwise-identical vectors.
    """

    dim: int
    rho: float = 0.99
    spike_density: float = 0.05
    spike_boost: float = 10.0
    noise_sigma: float = 0.1
    divergence: float = 0.3

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must be in (-1, 1)")
        if not 0.0 <= self.spike_density <= 1.0:
            raise ValueError("spike_density must be a probability")
        if self.noise_sigma < 0 or self.divergence < 0 or self.spike_boost < 1:
            raise ValueError("noise_sigma, divergence >= 0 and spike_boost >= 1 required")


def _ar1(innovations: np.ndarray, rho: float) -> np.ndarray:
    """Unit-stationary-variance AR(1) path driven by standard-normal noise."""
    scale = math.sqrt(1.0 - rho * rho)
    return lfilter([scale], [1.0, -rho], innovations)


def _row_width(rho: float) -> int:
    """Hot-row width: the locality scale 1/(1-rho) rounded to a power of two."""
    if rho <= 0.0:
        return 1
    return 1 << max(0, round(math.log2(1.0 / (1.0 - rho))))


def _shared_base(spec: SyntheticGradSpec, seeds: SeedSpec, round_index: int):
    rng = seeds.rng("grad-shared")
    innovations = rng.standard_normal(spec.dim)
    signs = rng.integers(0, 2, spec.dim) * 2.0 - 1.0
    env = np.abs(_ar1(innovations, spec.rho))
    if spec.spike_density > 0.0:
        width = _row_width(spec.rho)
        num_rows = -(-spec.dim // width)
        hot_rows = rng.random(num_rows) < spec.spike_density
        hot = np.repeat(hot_rows, width)[: spec.dim]
        env = env + spec.spike_boost * hot
    zeta = seeds.rng("grad-noise", round_index).standard_normal(spec.dim)
    base = signs * env + spec.noise_sigma * zeta
    return base, env


def synthetic_worker_gradient(
    spec: SyntheticGradSpec, seeds: SeedSpec, round_index: int, worker: int
) -> np.ndarray:
    """One worker's gradient for one round (float32, length ``spec.dim``)."""
    base, env = _shared_base(spec, seeds, round_index)
    wrng = seeds.rng("grad-worker", round_index, worker)
    xi = wrng.standard_normal(spec.dim)
    eta = wrng.standard_normal(spec.dim)
    g = base + spec.divergence * (env * xi + spec.noise_sigma * eta)
    return g.astype(np.float32)


def synthetic_round(spec: SyntheticGradSpec, seeds: SeedSpec, round_index: int, num_workers: int):
    """All workers' gradients for one round."""
    return [
        synthetic_worker_gradient(spec, seeds, round_index, w) for w in range(num_workers)
    ]


# ---------------------------------------------------------------------------
# Models


class LogisticModel:
    """Binary logistic regression on +-1 labels; flat params are [w, bias]."""

    def __init__(self, num_features: int) -> None:
        if num_features < 1:
            raise ValueError("num_features must be positive")
        self.num_features = num_features
        self.dim = num_features + 1

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        del rng  # zero init is exact and deterministic for a convex model
        return np.zeros(self.dim, dtype=np.float32)

    def _split(self, params: np.ndarray):
        return params[: self.num_features], params[self.num_features]

    def scores(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        w, b = self._split(params.astype(np.float64))
        return x.astype(np.float64) @ w + b

    def loss_and_grad(self, params: np.ndarray, x: np.ndarray, y: np.ndarray):
        z = self.scores(params, x)
        margin = y * z
        loss = float(np.mean(np.logaddexp(0.0, -margin)))
        dz = (-y * expit(-margin)) / y.size
        grad = np.concatenate([x.T @ dz, [dz.sum()]])
        return loss, grad.astype(np.float32)

    def accuracy(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        pred = np.where(self.scores(params, x) > 0, 1.0, -1.0)
        return float(np.mean(pred == y))


class TwoLayerNet:
    """features -> tanh hidden layer -> scalar logit, +-1 labels.

    Flat parameter order: W1 (features x hidden, row-major), b1, w2, bias.
    """

    def __init__(self, num_features: int, hidden: int) -> None:
        if num_features < 1 or hidden < 1:
            raise ValueError("num_features and hidden must be positive")
        self.num_features = num_features
        self.hidden = hidden
        self.dim = num_features * hidden + hidden + hidden + 1

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        f, h = self.num_features, self.hidden
        w1 = rng.standard_normal((f, h)) / math.sqrt(f)
        w2 = rng.standard_normal(h) / math.sqrt(h)
        return np.concatenate(
            [w1.reshape(-1), np.zeros(h), w2, np.zeros(1)]
        ).astype(np.float32)

    def _split(self, params: np.ndarray):
        f, h = self.num_features, self.hidden
        p = params.astype(np.float64)
        w1 = p[: f * h].reshape(f, h)
        b1 = p[f * h : f * h + h]
        w2 = p[f * h + h : f * h + 2 * h]
        b2 = p[-1]
        return w1, b1, w2, b2

    def scores(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._split(params)
        hidden = np.tanh(x.astype(np.float64) @ w1 + b1)
        return hidden @ w2 + b2

    def loss_and_grad(self, params: np.ndarray, x: np.ndarray, y: np.ndarray):
        w1, b1, w2, b2 = self._split(params)
        xd = x.astype(np.float64)
        pre = xd @ w1 + b1
        act = np.tanh(pre)
        z = act @ w2 + b2
        margin = y * z
        loss = float(np.mean(np.logaddexp(0.0, -margin)))
        dz = (-y * expit(-margin)) / y.size
        dw2 = act.T @ dz
        db2 = dz.sum()
        dact = np.outer(dz, w2)
        dpre = dact * (1.0 - act * act)
        dw1 = xd.T @ dpre
        db1 = dpre.sum(axis=0)
        grad = np.concatenate([dw1.reshape(-1), db1, dw2, [db2]])
        return loss, grad.astype(np.float32)

    def accuracy(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        pred = np.where(self.scores(params, x) > 0, 1.0, -1.0)
        return float(np.mean(pred == y))


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic Gaussian-cluster classification data.

    ``layout="blobs"`` puts one cluster per class at +-separation/2 along a
    fixed unit direction (linearly separable up to noise). ``layout="xor"``
    places two clusters per class on the corners of a square in the first two
    feature dimensions, which no linear model can split.
    """

    num_features: int = 64
    train_size: int = 8192
    val_size: int = 2048
    separation: float = 4.0
    cluster_noise: float = 1.0
    layout: str = "blobs"

    def __post_init__(self) -> None:
        if self.layout not in ("blobs", "xor"):
            raise ValueError("layout must be 'blobs' or 'xor'")
        if self.num_features < 2 or self.train_size < 2 or self.val_size < 2:
            raise ValueError("dataset sizes must be at least 2")
        if self.separation <= 0 or self.cluster_noise <= 0:
            raise ValueError("separation and cluster_noise must be positive")


def _sample_split(spec: DatasetSpec, rng: np.random.Generator, count: int):
    f = spec.num_features
    y = rng.integers(0, 2, count) * 2.0 - 1.0
    x = rng.standard_normal((count, f)) * spec.cluster_noise
    if spec.layout == "blobs":
        direction = np.ones(f) / math.sqrt(f)
        x += np.outer(y * spec.separation / 2.0, direction)
    else:
        corner = rng.integers(0, 2, count) * 2.0 - 1.0  # which same-class corner
        a = spec.separation / 2.0
        x[:, 0] += a * corner
        x[:, 1] += a * corner * y
    return x.astype(np.float32), y.astype(np.float64)


def make_cluster_dataset(spec: DatasetSpec, seeds: SeedSpec):
    """Returns (x_train, y_train, x_val, y_val), all from the shared stream."""
    rng = seeds.rng("dataset")
    x_train, y_train = _sample_split(spec, rng, spec.train_size)
    x_val, y_val = _sample_split(spec, rng, spec.val_size)
    return x_train, y_train, x_val, y_val


def load_csv_dataset(path: str, label_column: str):
    """Load a numeric CSV with a header row into (features, +-1 labels).

    Labels may be encoded as {-1, 1} or {0, 1}; anything else is rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError("dataset CSV is empty")
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in header")
        label_at = header.index(label_column)
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError("dataset CSV has no data rows")
    data = np.asarray(rows, dtype=np.float64)
    y = data[:, label_at]
    x = np.delete(data, label_at, axis=1).astype(np.float32)
    labels = set(np.unique(y).tolist())
    if labels <= {-1.0, 1.0}:
        pass
    elif labels <= {0.0, 1.0}:
        y = y * 2.0 - 1.0
    else:
        raise ValueError("labels must be {-1,1} or {0,1}")
    return x, y


def split_dataset(x: np.ndarray, y: np.ndarray, val_fraction: float, seeds: SeedSpec):
    """Shared shuffled split into (x_train, y_train, x_val, y_val)."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    perm = seeds.rng("dataset-split").permutation(y.size)
    cut = max(1, int(round(y.size * val_fraction)))
    val, train = perm[:cut], perm[cut:]
    if train.size == 0:
        raise ValueError("validation fraction leaves no training data")
    return x[train], y[train], x[val], y[val]


def minibatch_indices(
    seeds: SeedSpec, round_index: int, worker: int, train_size: int, batch_size: int
) -> np.ndarray:
    """The (round, worker) minibatch: with-replacement draws, reconstructible."""
    rng = seeds.rng("minibatch", round_index, worker)
    return rng.integers(0, train_size, batch_size)


# ---------------------------------------------------------------------------
# Curves


def rolling_average(values, window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` entries, truncated at the start.

    Entry i averages values[max(0, i - window + 1) .. i], so the output never
    looks into the future and the first entries average what exists so far.
    """
    if window < 1:
        raise ValueError("window must be positive")
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1:
        raise ValueError("values must be 1-d")
    sums = np.cumsum(vals)
    out = np.empty_like(vals)
    out[:window] = sums[:window] / np.arange(1, min(window, vals.size) + 1)
    if vals.size > window:
        out[window:] = (sums[window:] - sums[:-window]) / window
    return out


@dataclass(frozen=True)
class TtaCurve:
    """A validation-metric trajectory against simulated seconds."""

    scheme: str
    sim_seconds: np.ndarray
    raw_metric: np.ndarray
    smoothed_metric: np.ndarray
    diverged: bool = False

    def __post_init__(self) -> None:
        t = np.asarray(self.sim_seconds, dtype=np.float64)
        raw = np.asarray(self.raw_metric, dtype=np.float64)
        smooth = np.asarray(self.smoothed_metric, dtype=np.float64)
        if not (t.size == raw.size == smooth.size) or t.size == 0:
            raise ValueError("curve arrays must be non-empty and equal length")
        if np.any(np.diff(t) < 0):
            raise ValueError("sim_seconds must be non-decreasing")
        for name, arr in (("sim_seconds", t), ("raw_metric", raw), ("smoothed_metric", smooth)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def time_to(self, threshold: float) -> float | None:
        """First simulated time at which the smoothed metric reaches threshold."""
        hits = np.flatnonzero(self.smoothed_metric >= threshold)
        if hits.size == 0:
            return None
        return float(self.sim_seconds[hits[0]])

    def final_metric(self) -> float:
        return float(self.smoothed_metric[-1])


CURVE_CSV_HEADER = "scheme,round,sim_seconds,raw_metric,smoothed_metric"


def curves_to_csv(curves: dict[str, TtaCurve]) -> str:
    lines = [CURVE_CSV_HEADER]
    for label, curve in curves.items():
        for i in range(curve.sim_seconds.size):
            lines.append(
                ",".join(
                    [
                        label,
                        str(i),
                        repr(float(curve.sim_seconds[i])),
                        repr(float(curve.raw_metric[i])),
                        repr(float(curve.smoothed_metric[i])),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Training driver


@dataclass(frozen=True)
class EarlyStopRule:
    """Stop when validation loss has not improved by min_delta for patience rounds."""

    patience: int = 100
    min_delta: float = 1e-4

    def __post_init__(self) -> None:
        if self.patience < 1 or self.min_delta < 0:
            raise ValueError("patience >= 1 and min_delta >= 0 required")


@dataclass(frozen=True)
class TrainConfig:
    num_workers: int = 4
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.0
    max_rounds: int = 1000
    smoothing_window: int = 25
    early_stop: EarlyStopRule | None = field(default_factory=EarlyStopRule)

    def __post_init__(self) -> None:
        if self.num_workers < 1 or self.batch_size < 1 or self.max_rounds < 1:
            raise ValueError("num_workers, batch_size, max_rounds must be positive")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError("lr > 0 and 0 <= momentum < 1 required")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be positive")


def _round_seconds(model: TimeModel, ledger, label: str, family: str) -> float:
    key = label if label in model.compression_s else family
    wire = ledger.max_egress_bits() / model.bandwidth_bits_per_s
    return model.compute_s_per_round + float(model.compression_s.get(key, 0.0)) + wire


def train_scheme(
    pipeline: GradientPipeline,
    model,
    data,
    cfg: TrainConfig,
    time_model: TimeModel,
    seeds: SeedSpec,
    label: str | None = None,
) -> TtaCurve:
    """Train one scheme to completion and return its validation curve.

    ``data`` is (x_train, y_train, x_val, y_val). The parameter trajectory is
    identical across schemes up to the aggregation error they introduce: the
    init stream, batch schedule, and data are scheme-independent.
    """
    x_train, y_train, x_val, y_val = data
    if pipeline.group.size != cfg.num_workers:
        raise ValueError("pipeline and train config disagree on worker count")
    if pipeline.dim != model.dim:
        raise ValueError("pipeline dim must equal the model parameter count")
    label = label or pipeline.scheme
    params = model.init_params(seeds.rng("model-init"))
    velocity = np.zeros(model.dim, dtype=np.float32)
    times, raw = [], []
    clock = 0.0
    diverged = False
    best_loss, since_best = math.inf, 0

    for round_index in range(cfg.max_rounds):
        grads = []
        for worker in range(cfg.num_workers):
            idx = minibatch_indices(seeds, round_index, worker, y_train.size, cfg.batch_size)
            _, g = model.loss_and_grad(params, x_train[idx], y_train[idx])
            grads.append(g)
        result = pipeline.run_round(grads, round_index)
        step = result.estimate.logical
        velocity = cfg.momentum * velocity + step
        params = (params - cfg.lr * velocity).astype(np.float32)
        clock += _round_seconds(time_model, result.ledger, label, pipeline.scheme)

        val_scores = model.scores(params, x_val)
        margin = y_val * val_scores
        val_loss = float(np.mean(np.logaddexp(0.0, -margin)))
        val_acc = float(np.mean(np.where(val_scores > 0, 1.0, -1.0) == y_val))
        times.append(clock)
        raw.append(val_acc)

        if not np.isfinite(val_loss) or not np.all(np.isfinite(params)):
            diverged = True
            break
        if cfg.early_stop is not None:
            if val_loss < best_loss - cfg.early_stop.min_delta:
                best_loss, since_best = val_loss, 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop.patience:
                    break

    smoothed = rolling_average(raw, cfg.smoothing_window)
    return TtaCurve(label, np.asarray(times), np.asarray(raw), smoothed, diverged)


def run_tta_study(
    scheme_configs: dict,
    model,
    data,
    cfg: TrainConfig,
    time_model: TimeModel,
    seeds: SeedSpec,
) -> dict[str, TtaCurve]:
    """Train every labelled scheme config on the same data and seeds.

    ``scheme_configs`` maps labels to compressor configs (or to
    ``(config, error_feedback)`` pairs to override the EF default).
    """
    from .pipelines import make_pipeline

    curves: dict[str, TtaCurve] = {}
    for study_label, entry in scheme_configs.items():
        if isinstance(entry, tuple):
            config, error_feedback = entry
        else:
            config, error_feedback = entry, None
        pipeline = make_pipeline(config, cfg.num_workers, model.dim, seeds, error_feedback)
        curves[study_label] = train_scheme(
            pipeline, model, data, cfg, time_model, seeds, label=study_label
        )
    return curves
