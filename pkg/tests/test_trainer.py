import json
import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from contrastive_duality.criteria import LossSpec
from contrastive_duality.errors import DivergedLoss, ShapeMismatch
from contrastive_duality.gradients import spec_for
from contrastive_duality.matrix import read_csv
from contrastive_duality.trainer import (
    AugmentationConfig,
    DatasetSpec,
    ModelSpec,
    OfflineProbeConfig,
    ProbeState,
    TrainConfig,
    augment,
    backward,
    default_model,
    export_embeddings,
    fit_linear_probe,
    forward,
    generate_dataset,
    init_model,
    loss_and_grad,
    lr_at,
    offline_probe,
    online_probe_step,
    train,
    tuned_config,
    write_run,
)
from contrastive_duality.trainer.runio import EMBEDDINGS_FILE, MANIFEST_FILE, METRICS_FILE, REPRESENTATIONS_FILE

IDENTITY_AUG = AugmentationConfig(noise_std=0.0, scale_lo=1.0, scale_hi=1.0, dropout=0.0)
SMALL = DatasetSpec(n_samples=512, n_classes=4)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(SMALL)


def quick(loss="vicreg", **kw):
    base = dict(loss=spec_for(loss), batch_size=64, epochs=2, base_lr=0.05, warmup_epochs=1)
    base.update(kw)
    return TrainConfig(**base)


# -- dataset -------------------------------------------------------------------------


def test_dataset_is_deterministic_and_balanced():
    a, b = generate_dataset(SMALL), generate_dataset(SMALL)
    assert_array_equal(a.X, b.X)
    assert_array_equal(a.y, b.y)
    counts = np.bincount(generate_dataset(DatasetSpec(n_samples=1003, n_classes=8)).y)
    assert counts.max() - counts.min() <= 1
    assert not np.array_equal(a.X, generate_dataset(replace(SMALL, seed=1)).X)


def test_dataset_split_is_stratified(small_dataset):
    ds = small_dataset
    assert np.intersect1d(ds.train_idx, ds.test_idx).size == 0
    assert ds.train_idx.size + ds.test_idx.size == SMALL.n_samples
    assert np.all(np.bincount(ds.y_test) == 26)


def test_zero_spread_puts_samples_on_class_means():
    ds = generate_dataset(replace(SMALL, sigma_class=0.0))
    assert_array_equal(ds.X, ds.means[ds.y])
    assert_allclose(np.linalg.norm(ds.means, axis=1), SMALL.radius)


def test_separated_classes_are_linearly_separable():
    ds = generate_dataset(DatasetSpec(n_samples=1000, n_classes=2, radius=8.0))
    predict = fit_linear_probe(ds.X_train, ds.y_train, 2)
    assert np.mean(predict(ds.X_test) == ds.y_test) >= 0.99


@pytest.mark.parametrize("kw", [dict(n_samples=2, n_classes=4), dict(radius=-1.0), dict(test_fraction=1.0)])
def test_dataset_spec_validation(kw):
    with pytest.raises(ValueError):
        DatasetSpec(**kw)


# -- augmentation ----------------------------------------------------------------------


def test_identity_augmentation(rng):
    x = rng.standard_normal((5, 3))
    v1, v2 = augment(x, IDENTITY_AUG, rng)
    assert_array_equal(v1, x)
    assert_array_equal(v2, x)


def test_noisy_views_differ(rng):
    x = rng.standard_normal((5, 3))
    v1, v2 = augment(x, AugmentationConfig(noise_std=0.1, scale_lo=1.0, scale_hi=1.0, dropout=0.0), rng)
    assert np.all(v1 != v2)


def test_expected_view_is_mean_scale_times_input(rng):
    cfg = AugmentationConfig()
    x = np.array([1.0, -2.0, 0.5, 3.0])
    views = augment(np.tile(x, (10_000, 1)), cfg, rng)[0]
    se = views.std(axis=0) / math.sqrt(10_000)
    assert np.all(np.abs(views.mean(axis=0) - cfg.mean_scale * x) <= 5 * se)


@pytest.mark.parametrize("kw", [dict(noise_std=-1.0), dict(scale_lo=0.0), dict(scale_lo=2.0, scale_hi=1.0), dict(dropout=1.0)])
def test_augmentation_validation(kw):
    with pytest.raises(ValueError):
        AugmentationConfig(**kw)


# -- model -------------------------------------------------------------------------------


def test_forward_shapes(rng):
    spec = default_model(emb_dim=8, projector="4R-4R-d")
    model = init_model(spec, rng)
    rep, emb, _ = forward(model, rng.standard_normal((10, spec.input_dim)))
    assert rep.shape == (10, 16) and emb.shape == (10, 8)
    with pytest.raises(ShapeMismatch):
        forward(model, rng.standard_normal((10, spec.input_dim + 1)))


@pytest.mark.parametrize("projector, widths", [("d-d-d", (16, 8, 8, 8)), ("2R-d", (16, 32, 8)), ("4R-4R-d", (16, 64, 64, 8))])
def test_projector_shapes(projector, widths):
    assert default_model(emb_dim=8, projector=projector).projector_widths == widths


def test_zero_weights_give_zero_embeddings(rng):
    model = init_model(default_model(), rng)
    for layer in model.layers():
        layer.W[:] = 0.0
    _, emb, _ = forward(model, rng.standard_normal((6, 32)), train=False)
    assert_array_equal(emb, 0.0)


def test_identity_model_passes_inputs_through(rng):
    model = init_model(ModelSpec((4,), (4, 4), batchnorm=False), rng)
    model.projector[0].W[:] = np.eye(4)
    X = rng.standard_normal((7, 4))
    rep, emb, _ = forward(model, X)
    assert_array_equal(rep, X)
    assert_array_equal(emb, X)


def test_backward_matches_finite_differences(rng):
    spec = ModelSpec((5, 6, 4), (4, 6, 3))
    model = init_model(spec, rng)
    X = rng.standard_normal((8, 5))
    G = rng.standard_normal((8, 3))
    _, _, caches = forward(model, X)
    grads = backward(model, caches, G)
    h = 1e-6
    for name, p in model.named_params().items():
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            p0 = p[idx]
            p[idx] = p0 + h
            fp = np.sum(forward(model, X)[1] * G)
            p[idx] = p0 - h
            fm = np.sum(forward(model, X)[1] * G)
            p[idx] = p0
            fd[idx] = (fp - fm) / (2 * h)
        assert_allclose(grads[name], fd, rtol=1e-5, atol=1e-7, err_msg=name)


@pytest.mark.parametrize("loss, scheme", [("simclr", "classical"), ("vicreg", "none"), ("tcr", "centered-classical"),
                                          ("vicreg-ctr", "dim-standardize"), ("scl", "classical")])
def test_objective_gradient_through_normalization(rng, loss, scheme):
    cfg = TrainConfig(loss=spec_for(loss, tau=0.5), normalization=scheme)
    E1, E2 = rng.standard_normal((2, 6, 4))
    _, d1, d2 = loss_and_grad(cfg, E1, E2)
    h = 1e-6
    for E, d in ((E1, d1), (E2, d2)):
        fd = np.zeros_like(E)
        for idx in np.ndindex(E.shape):
            e0 = E[idx]
            E[idx] = e0 + h
            fp = loss_and_grad(cfg, E1, E2)[0].value
            E[idx] = e0 - h
            fm = loss_and_grad(cfg, E1, E2)[0].value
            E[idx] = e0
            fd[idx] = (fp - fm) / (2 * h)
        assert np.max(np.abs(d - fd)) <= 1e-5 * max(np.max(np.abs(fd)), 1e-8)


# -- schedule and config ---------------------------------------------------------------------


def test_learning_rate_schedule():
    assert lr_at(0, 100, 10, 1.0) == pytest.approx(0.1)
    assert lr_at(9, 100, 10, 1.0) == pytest.approx(1.0)
    assert lr_at(10, 100, 10, 1.0) == pytest.approx(1.0)
    assert lr_at(55, 100, 10, 1.0) == pytest.approx(0.5)
    assert lr_at(100, 100, 10, 1.0) == pytest.approx(0.0, abs=1e-15)
    lrs = [lr_at(s, 100, 10, 1.0) for s in range(10, 100)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_effective_learning_rate_scales_with_batch():
    assert TrainConfig(base_lr=0.4, batch_size=128).effective_lr == pytest.approx(0.2)
    assert TrainConfig(base_lr=0.4, batch_size=512).effective_lr == pytest.approx(0.8)


@pytest.mark.parametrize("kw", [dict(batch_size=1), dict(epochs=0), dict(momentum=1.0), dict(normalization="bogus")])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# -- training -------------------------------------------------------------------------------


def test_training_is_deterministic(small_dataset):
    spec = default_model(emb_dim=8)
    a = train(quick(), small_dataset, spec)
    b = train(quick(), small_dataset, spec)
    assert a.metrics == b.metrics
    for k, v in a.model.named_params().items():
        assert_array_equal(v, b.model.named_params()[k])
    c = train(quick(seed=1), small_dataset, spec)
    assert c.metrics != a.metrics


def test_metrics_history(small_dataset):
    run = train(quick(epochs=3), small_dataset, default_model(emb_dim=8))
    assert len(run.metrics) == 3
    for row in run.metrics:
        assert {"epoch", "lr", "loss", "invariance", "variance", "covariance", "online_test_acc"} <= set(row)
        assert all(math.isfinite(v) for v in row.values())
    assert run.final_online_accuracy == run.metrics[-1]["online_test_acc"]


def test_zero_learning_rate_freezes_parameters(small_dataset):
    spec = default_model(emb_dim=8)
    cfg = quick(base_lr=0.0, batch_size=len(small_dataset.train_idx), augmentation=IDENTITY_AUG, epochs=3)
    run = train(cfg, small_dataset, spec)
    init = init_model(spec, np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0]))
    for k, v in run.model.named_params().items():
        assert_array_equal(v, init.named_params()[k])
    losses = [row["loss"] for row in run.metrics]
    assert_allclose(losses, losses[0], rtol=1e-12)


def test_online_probe_never_touches_the_network(small_dataset):
    spec = default_model(emb_dim=8)
    on = train(quick(online_probe=True), small_dataset, spec)
    off = train(quick(online_probe=False), small_dataset, spec)
    for k, v in on.model.named_params().items():
        assert_array_equal(v, off.model.named_params()[k])
    for a, b in zip(on.model.layers(), off.model.layers()):
        if a.running_mean is not None:
            assert_array_equal(a.running_mean, b.running_mean)
    assert "online_test_acc" not in off.metrics[-1]


@pytest.mark.parametrize("loss, scheme", [("simclr", "classical"), ("dcl-sq", "classical"), ("barlow-twins", "bt-standardize"),
                                          ("tcr", "classical"), ("vicreg-ctr-rewrite", "none"), ("scl", "classical")])
def test_every_family_trains(small_dataset, loss, scheme):
    run = train(quick(loss, normalization=scheme), small_dataset, default_model(emb_dim=8))
    assert all(math.isfinite(r["loss"]) for r in run.metrics)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(small_dataset):
    cfg = quick(base_lr=1e8, warmup_epochs=0, weight_decay=0.0)
    with pytest.raises(DivergedLoss) as exc:
        train(cfg, small_dataset, default_model(emb_dim=8))
    assert exc.value.epoch is not None


def test_inactive_sample_gets_zero_embedding_and_no_gradient(rng):
    cfg = TrainConfig(loss=spec_for("simclr", tau=0.2), normalization="classical")
    E1, E2 = rng.standard_normal((2, 8, 4))
    E1[3] = 0.0
    lv, d1, d2 = loss_and_grad(cfg, E1, E2)
    assert math.isfinite(lv.value)
    assert_array_equal(d1[3], 0.0)


def test_vicreg_learns_four_class_task():
    ds = generate_dataset(DatasetSpec(n_classes=4))
    run = train(tuned_config("vicreg", epochs=50), ds, default_model())
    assert run.final_online_accuracy >= 0.90


# -- probes -------------------------------------------------------------------------------------


def test_online_probe_learns_separable_representations(rng):
    y = rng.integers(0, 3, 300)
    H = np.eye(3)[y] * 2.0 + 0.05 * rng.standard_normal((300, 3))
    state = ProbeState.zeros(3, 3)
    for _ in range(50):
        acc = online_probe_step(H, y, state, lr=0.5)
    assert acc == 1.0 and state.accuracy(H, y) == 1.0


def test_online_probe_does_not_modify_inputs(rng):
    H = rng.standard_normal((20, 4))
    H0 = H.copy()
    online_probe_step(H, rng.integers(0, 3, 20), ProbeState.zeros(4, 3))
    assert_array_equal(H, H0)


def test_random_labels_stay_near_chance(default_dataset):
    ds = default_dataset
    y = np.random.default_rng(0).integers(0, 8, ds.X.shape[0])
    predict = fit_linear_probe(ds.X_train, y[ds.train_idx], 8)
    acc = np.mean(predict(ds.X_test) == y[ds.test_idx])
    n = ds.test_idx.size
    assert abs(acc - 1 / 8) <= 4 * math.sqrt(1 / 8 * 7 / 8 / n)
    state = ProbeState.zeros(32, 8)
    accs = [online_probe_step(ds.X_train[i : i + 256], y[ds.train_idx][i : i + 256], state, lr=0.01)
            for i in range(0, 3200, 256)]
    assert abs(np.mean(accs[2:]) - 1 / 8) < 0.06


def test_random_encoder_is_above_chance_and_below_trained(default_dataset):
    spec = default_model()
    random_acc = offline_probe(init_model(spec, np.random.default_rng(0)), default_dataset)
    trained = train(tuned_config("vicreg", epochs=10), default_dataset, spec)
    trained_acc = offline_probe(trained.model, default_dataset)
    assert 1 / 8 + 0.1 < random_acc < trained_acc
    assert offline_probe(trained.model, default_dataset) == trained_acc


def test_offline_probe_without_standardization(small_dataset):
    run = train(quick(epochs=3), small_dataset, default_model(emb_dim=8))
    acc = offline_probe(run.model, small_dataset, OfflineProbeConfig(standardize=False, max_iter=200))
    assert 0.25 < acc <= 1.0


# -- export -------------------------------------------------------------------------------------


@pytest.mark.parametrize("scheme", ["none", "classical", "dim-standardize"])
def test_export_embeddings(small_dataset, scheme):
    run = train(quick(normalization=scheme), small_dataset, default_model(emb_dim=8))
    K, R = export_embeddings(run.model, small_dataset.X_test[:50], scheme)
    assert K.shape == (8, 50) and R.shape == (16, 50)
    assert_allclose(R.mean(axis=1), 0.0, atol=1e-12)
    if scheme == "classical":
        assert_allclose(np.linalg.norm(K, axis=0), 1.0, rtol=1e-12)


def test_write_run_round_trips(tmp_path, small_dataset):
    cfg = quick(base_lr=0.2, batch_size=128, normalization="classical", loss="simclr")
    run = train(cfg, small_dataset, default_model(emb_dim=8))
    run.offline_accuracy = offline_probe(run.model, small_dataset)
    out = write_run(tmp_path / "run", run, small_dataset, n_export=40)
    K, R = export_embeddings(run.model, small_dataset.X_test[:40], "classical")
    assert_array_equal(read_csv(out / EMBEDDINGS_FILE), K)
    assert_array_equal(read_csv(out / REPRESENTATIONS_FILE), R)
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    assert manifest["train"]["effective_lr"] == pytest.approx(0.1)
    assert manifest["train"]["normalization"] == "classical"
    assert manifest["offline_accuracy"] == run.offline_accuracy
    lines = (out / METRICS_FILE).read_text().splitlines()
    assert lines[0].startswith("epoch,lr,loss") and len(lines) == 1 + cfg.epochs
    assert LossSpec("simclr").loss_id == manifest["train"]["loss"]
