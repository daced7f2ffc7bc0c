"""Synthetic gradient statistics, model gradients, data plumbing, TTA curves."""

import numpy as np
import pytest

from gradcomp.metrics import TimeModel
from gradcomp.pipelines import make_pipeline
from gradcomp.compressors import DenseConfig
from gradcomp.trainbench import (
    DatasetSpec,
    EarlyStopRule,
    LogisticModel,
    SyntheticGradSpec,
    TrainConfig,
    TtaCurve,
    TwoLayerNet,
    curves_to_csv,
    load_csv_dataset,
    make_cluster_dataset,
    minibatch_indices,
    rolling_average,
    run_tta_study,
    split_dataset,
    synthetic_round,
    synthetic_worker_gradient,
    train_scheme,
)
from gradcomp.vectors import SeedSpec


def lag1_correlation(x: np.ndarray) -> float:
    a, b = x[:-1], x[1:]
    a = a - a.mean()
    b = b - b.mean()
    return float((a @ b) / np.sqrt((a @ a) * (b @ b)))


# ---------------------------------------------------------------------------
# synthetic gradients


def clean_spec(dim, rho):
    """Envelope only: no spikes, no dense noise, no worker divergence."""
    return SyntheticGradSpec(
        dim=dim, rho=rho, spike_density=0.0, noise_sigma=0.0, divergence=0.0
    )


def test_envelope_carries_the_requested_correlation():
    dim = 1 << 15
    g = synthetic_worker_gradient(clean_spec(dim, 0.99), SeedSpec(0), 0, 0)
    assert lag1_correlation(np.abs(g).astype(np.float64)) > 0.9
    flat = synthetic_worker_gradient(clean_spec(dim, 0.0), SeedSpec(0), 0, 0)
    assert abs(lag1_correlation(np.abs(flat).astype(np.float64))) < 0.05


def test_envelope_has_unit_scale():
    g = synthetic_worker_gradient(clean_spec(1 << 16, 0.99), SeedSpec(1), 0, 0)
    assert float(np.mean(np.square(g, dtype=np.float64))) == pytest.approx(1.0, rel=0.1)


def test_structure_persists_across_rounds():
    spec = clean_spec(4096, 0.99)
    seeds = SeedSpec(2)
    first = synthetic_worker_gradient(spec, seeds, 0, 0)
    later = synthetic_worker_gradient(spec, seeds, 7, 0)
    assert np.array_equal(first, later)  # envelope and signs are round-free
    noisy_spec = SyntheticGradSpec(
        dim=4096, rho=0.99, spike_density=0.0, noise_sigma=0.1, divergence=0.0
    )
    assert not np.array_equal(
        synthetic_worker_gradient(noisy_spec, seeds, 0, 0),
        synthetic_worker_gradient(noisy_spec, seeds, 7, 0),
    )


def test_zero_divergence_makes_workers_identical():
    spec = SyntheticGradSpec(dim=1024, divergence=0.0)
    grads = synthetic_round(spec, SeedSpec(3), 0, 4)
    for g in grads[1:]:
        assert np.array_equal(grads[0], g)
    spread = synthetic_round(SyntheticGradSpec(dim=1024, divergence=0.3), SeedSpec(3), 0, 4)
    assert not np.array_equal(spread[0], spread[1])


def test_hot_rows_are_aligned_plateaus():
    dim = 1 << 15
    spec = SyntheticGradSpec(
        dim=dim, rho=0.99, spike_density=0.2, spike_boost=50.0,
        noise_sigma=0.0, divergence=0.0,
    )
    g = synthetic_worker_gradient(spec, SeedSpec(4), 0, 0)
    hot = np.abs(g) > 25.0  # the boost dwarfs the unit-scale envelope
    rows = hot.reshape(-1, 128)  # locality scale 1/(1-rho) = 100 -> width 128
    assert np.all(rows.all(axis=1) | ~rows.any(axis=1))  # whole rows only
    frac = float(rows.all(axis=1).mean())
    assert 0.1 < frac < 0.3  # binomial around the requested density


def test_gradients_are_reproducible_and_finite():
    spec = SyntheticGradSpec(dim=512)
    a = synthetic_worker_gradient(spec, SeedSpec(5), 3, 2)
    b = synthetic_worker_gradient(spec, SeedSpec(5), 3, 2)
    assert np.array_equal(a, b)
    assert a.dtype == np.float32
    assert np.all(np.isfinite(a))
    assert not np.array_equal(a, synthetic_worker_gradient(spec, SeedSpec(6), 3, 2))


def test_grad_spec_validation():
    with pytest.raises(ValueError):
        SyntheticGradSpec(dim=1)
    with pytest.raises(ValueError):
        SyntheticGradSpec(dim=16, rho=1.0)
    with pytest.raises(ValueError):
        SyntheticGradSpec(dim=16, spike_density=1.5)
    with pytest.raises(ValueError):
        SyntheticGradSpec(dim=16, spike_boost=0.5)


# ---------------------------------------------------------------------------
# models


def finite_difference_gradient(model, params, x, y, eps=2.0**-12):
    grad = np.empty(model.dim)
    for i in range(model.dim):
        up = params.copy()
        up[i] += eps
        down = params.copy()
        down[i] -= eps
        grad[i] = (model.loss_and_grad(up, x, y)[0] - model.loss_and_grad(down, x, y)[0]) / (
            2 * eps
        )
    return grad


@pytest.mark.parametrize("model", [LogisticModel(3), TwoLayerNet(3, 4)])
def test_model_gradients_match_finite_differences(model):
    rng = np.random.default_rng(20)
    # params on a coarse grid so the float32 cast of params +- eps is exact
    params = (rng.integers(-16, 17, model.dim) / 32.0).astype(np.float32)
    x = rng.standard_normal((12, 3)).astype(np.float32)
    y = (rng.integers(0, 2, 12) * 2.0 - 1.0).astype(np.float64)
    _, grad = model.loss_and_grad(params, x, y)
    fd = finite_difference_gradient(model, params, x, y)
    assert np.max(np.abs(grad - fd)) < 1e-4


def test_model_dims():
    assert LogisticModel(64).dim == 65
    assert TwoLayerNet(64, 48).dim == 64 * 48 + 48 + 48 + 1
    assert LogisticModel(3).init_params(SeedSpec(0).rng("model-init")).dtype == np.float32


def test_two_layer_init_is_seeded():
    model = TwoLayerNet(5, 4)
    a = model.init_params(SeedSpec(9).rng("model-init"))
    b = model.init_params(SeedSpec(9).rng("model-init"))
    assert np.array_equal(a, b)


def test_accuracy_counts_sign_agreement():
    model = LogisticModel(2)
    params = np.array([1.0, 0.0, 0.0], dtype=np.float32)  # predict sign(x0)
    x = np.array([[2.0, 0.0], [-2.0, 0.0], [3.0, 0.0], [-1.0, 0.0]], dtype=np.float32)
    y = np.array([1.0, -1.0, -1.0, 1.0])
    assert model.accuracy(params, x, y) == 0.5


# ---------------------------------------------------------------------------
# datasets


def test_blobs_are_linearly_separable_along_the_diagonal():
    spec = DatasetSpec(num_features=16, train_size=2000, val_size=100, separation=4.0)
    x, y, _, _ = make_cluster_dataset(spec, SeedSpec(11))
    direction = np.ones(16) / 4.0
    acc = np.mean(np.sign(x @ direction) == y)
    assert acc > 0.9


def test_xor_defeats_linear_rules_but_not_products():
    spec = DatasetSpec(
        num_features=8, train_size=4000, val_size=100, separation=6.0, layout="xor"
    )
    x, y, _, _ = make_cluster_dataset(spec, SeedSpec(12))
    linear = max(
        float(np.mean(np.sign(x[:, 0]) == y)), float(np.mean(np.sign(x[:, 1]) == y))
    )
    assert linear < 0.65
    product = float(np.mean(np.sign(x[:, 0] * x[:, 1]) == y))
    assert product > 0.9


def test_dataset_is_deterministic_with_shapes():
    spec = DatasetSpec(num_features=4, train_size=64, val_size=32)
    a = make_cluster_dataset(spec, SeedSpec(13))
    b = make_cluster_dataset(spec, SeedSpec(13))
    for left, right in zip(a, b):
        assert np.array_equal(left, right)
    x_train, y_train, x_val, y_val = a
    assert x_train.shape == (64, 4) and x_val.shape == (32, 4)
    assert x_train.dtype == np.float32
    assert set(np.unique(y_train)) <= {-1.0, 1.0}
    assert y_val.size == 32


def test_load_csv_dataset_and_split(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f0,label,f1\n1.0,0,2.0\n3.0,1,4.0\n5.0,1,6.0\n7.0,0,8.0\n")
    x, y = load_csv_dataset(str(path), "label")
    assert x.shape == (4, 2)
    assert y.tolist() == [-1.0, 1.0, 1.0, -1.0]  # 0/1 recoded to -1/+1
    assert x[0].tolist() == [1.0, 2.0]

    xt, yt, xv, yv = split_dataset(x, y, 0.25, SeedSpec(14))
    assert yv.size == 1 and yt.size == 3
    assert sorted(np.concatenate([yt, yv]).tolist()) == sorted(y.tolist())

    bad = tmp_path / "bad.csv"
    bad.write_text("f0,label\n1.0,2\n")
    with pytest.raises(ValueError):
        load_csv_dataset(str(bad), "label")
    with pytest.raises(ValueError):
        load_csv_dataset(str(path), "missing")
    with pytest.raises(ValueError):
        split_dataset(x, y, 1.5, SeedSpec(0))


def test_minibatch_indices_reconstructible():
    a = minibatch_indices(SeedSpec(15), 3, 1, 1000, 32)
    b = minibatch_indices(SeedSpec(15), 3, 1, 1000, 32)
    assert np.array_equal(a, b)
    assert a.size == 32
    assert a.min() >= 0 and a.max() < 1000
    assert not np.array_equal(a, minibatch_indices(SeedSpec(15), 3, 2, 1000, 32))
    assert not np.array_equal(a, minibatch_indices(SeedSpec(15), 4, 1, 1000, 32))


# ---------------------------------------------------------------------------
# curves


def test_rolling_average_matches_loop():
    vals = np.array([1.0, 3.0, 5.0, 7.0, 9.0])
    got = rolling_average(vals, 3)
    expect = [1.0, 2.0, 3.0, 5.0, 7.0]
    assert np.allclose(got, expect)
    assert np.allclose(rolling_average(vals, 1), vals)
    assert np.allclose(rolling_average(vals, 10), np.cumsum(vals) / np.arange(1, 6))
    with pytest.raises(ValueError):
        rolling_average(vals, 0)


def test_tta_curve_time_to_threshold():
    curve = TtaCurve(
        "s",
        np.array([1.0, 2.0, 3.0]),
        np.array([0.5, 0.8, 0.9]),
        np.array([0.5, 0.65, 0.9]),
    )
    assert curve.time_to(0.6) == 2.0
    assert curve.time_to(0.9) == 3.0
    assert curve.time_to(0.95) is None
    assert curve.final_metric() == 0.9
    with pytest.raises(ValueError):
        TtaCurve("s", np.array([2.0, 1.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        TtaCurve("s", np.array([1.0]), np.zeros(2), np.zeros(2))


def test_curves_to_csv_golden():
    curve = TtaCurve("lab", np.array([0.5]), np.array([0.25]), np.array([0.25]))
    assert curves_to_csv({"lab": curve}) == (
        "scheme,round,sim_seconds,raw_metric,smoothed_metric\n" "lab,0,0.5,0.25,0.25\n"
    )


# ---------------------------------------------------------------------------
# training driver


def bench_fixture():
    model = LogisticModel(8)
    spec = DatasetSpec(num_features=8, train_size=256, val_size=64, separation=6.0)
    seeds = SeedSpec(16)
    data = make_cluster_dataset(spec, seeds)
    time_model = TimeModel(1e6, compute_s_per_round=0.001)
    return model, data, time_model, seeds


def test_train_scheme_learns_the_blobs():
    model, data, time_model, seeds = bench_fixture()
    cfg = TrainConfig(
        num_workers=2, batch_size=16, lr=0.5, momentum=0.0,
        max_rounds=60, smoothing_window=5, early_stop=None,
    )
    pipe = make_pipeline(DenseConfig(32), 2, model.dim, seeds)
    curve = train_scheme(pipe, model, data, cfg, time_model, seeds)
    assert curve.sim_seconds.size == 60
    assert not curve.diverged
    assert curve.final_metric() > 0.9
    assert np.all(np.diff(curve.sim_seconds) > 0)


def test_train_scheme_is_reproducible():
    model, data, time_model, seeds = bench_fixture()
    cfg = TrainConfig(
        num_workers=2, batch_size=8, lr=0.2, momentum=0.5,
        max_rounds=10, smoothing_window=3, early_stop=None,
    )
    a = train_scheme(make_pipeline(DenseConfig(16), 2, model.dim, seeds), model, data, cfg, time_model, seeds)
    b = train_scheme(make_pipeline(DenseConfig(16), 2, model.dim, seeds), model, data, cfg, time_model, seeds)
    assert np.array_equal(a.raw_metric, b.raw_metric)
    assert np.array_equal(a.sim_seconds, b.sim_seconds)


def test_early_stop_halts_on_plateau():
    model, data, time_model, seeds = bench_fixture()
    cfg = TrainConfig(
        num_workers=2, batch_size=8, lr=1e-9, momentum=0.0,  # too small to improve
        max_rounds=50, smoothing_window=3,
        early_stop=EarlyStopRule(patience=3, min_delta=0.5),
    )
    pipe = make_pipeline(DenseConfig(32), 2, model.dim, seeds)
    curve = train_scheme(pipe, model, data, cfg, time_model, seeds)
    assert curve.sim_seconds.size == 4  # about-to-improve round plus patience


def test_run_tta_study_labels_and_time_model_keys():
    model, data, _, seeds = bench_fixture()
    cfg = TrainConfig(
        num_workers=2, batch_size=8, lr=0.2, momentum=0.0,
        max_rounds=5, smoothing_window=2, early_stop=None,
    )
    # a label-specific compression cost applies to that study entry only
    time_model = TimeModel(1e9, compression_s={"slow": 1.0})
    curves = run_tta_study(
        {"slow": DenseConfig(16), "fast": DenseConfig(16)},
        model, data, cfg, time_model, seeds,
    )
    assert set(curves) == {"slow", "fast"}
    assert curves["slow"].scheme == "slow"
    assert float(curves["slow"].sim_seconds[0]) > 1.0
    assert float(curves["fast"].sim_seconds[0]) < 0.1
    assert np.array_equal(curves["slow"].raw_metric, curves["fast"].raw_metric)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(num_workers=0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        EarlyStopRule(patience=0)
    with pytest.raises(ValueError):
        DatasetSpec(layout="rings")
    with pytest.raises(ValueError):
        DatasetSpec(num_features=1)
