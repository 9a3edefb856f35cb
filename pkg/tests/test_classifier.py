import numpy as np
import pytest

from onn.classifier import (
    CoreCnn,
    CoreCnnSpec,
    LabeledArrays,
    TrainConfig,
    TrainingError,
    build_core_cnn,
    build_focal_views,
    core_cnn_gradcheck,
    evaluate,
    extract_hidden,
    fit,
    predict_proba,
    train_baseline,
    train_focal,
    write_history_csv,
)
from onn.dataset import generate_shapes_dataset
from onn.engine import Dense, Sequential, cross_entropy, softmax
from onn.pyramid import PyramidConfig

SMALL = CoreCnnSpec(input_size=16, blocks=((4, 1), (8, 1)), hidden=12, num_classes=3)


def closed_form_params(spec):
    total, cin, k = 0, spec.in_channels, spec.kernel
    for cout, n in spec.blocks:
        for _ in range(n):
            total += k * k * cin * cout + cout
            cin = cout
    return total + spec.flat_features * spec.hidden + spec.hidden + spec.hidden * spec.num_classes + spec.num_classes


@pytest.mark.parametrize("spec", [SMALL, CoreCnnSpec(), CoreCnnSpec(input_size=64, in_channels=3, num_classes=10)])
def test_parameter_count_matches_closed_form(spec):
    assert build_core_cnn(spec).num_parameters() == closed_form_params(spec)


def test_desk_architecture_count():
    # 3x3 convs 1-16-16-32-32-64-64, 1024 -> 128 -> 4
    assert build_core_cnn(CoreCnnSpec()).num_parameters() == 203_508


def test_spec_validation():
    with pytest.raises(ValueError, match="divisible"):
        CoreCnnSpec(input_size=20, blocks=((4, 1), (4, 1), (4, 1)))
    with pytest.raises(ValueError):
        CoreCnnSpec(num_classes=1)


def test_shape_contract():
    model = build_core_cnn(SMALL)
    with pytest.raises(ValueError, match="expects"):
        predict_proba(model, np.zeros((2, 1, 32, 32), np.float32))
    p = predict_proba(model, np.random.default_rng(0).random((5, 1, 16, 16)))
    assert p.shape == (5, 3)
    np.testing.assert_allclose(p.sum(1), 1, atol=1e-6)


def test_initial_loss_near_log_k():
    model = build_core_cnn(CoreCnnSpec(), seed=0)
    x = np.random.default_rng(1).random((64, 1, 32, 32), dtype=np.float32)
    y = np.arange(64) % 4
    loss = cross_entropy(predict_proba(model, x), y)
    assert abs(loss - np.log(4)) < 0.1


def toy_arrays(n=48, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    x = rng.random((n, 1, 16, 16), dtype=np.float32) * 0.3
    for i, label in enumerate(y):
        x[i, 0, :, label * 5:(label + 1) * 5] += 0.7
    return LabeledArrays(x, y)


def test_zero_learning_rate_leaves_weights_unchanged():
    model = build_core_cnn(SMALL, seed=2)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    data = toy_arrays()
    train_baseline(model, data, data, TrainConfig(learning_rate=0.0, batch_size=8, max_epochs=2, top_k=2))
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_negative_learning_rate_rejected():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-0.1)


def test_training_learns_toy_task_and_is_reproducible():
    data = toy_arrays()
    cfg = TrainConfig(learning_rate=0.05, batch_size=4, max_epochs=6, patience=6, top_k=2)
    a = train_baseline(build_core_cnn(SMALL, seed=3), data, data, cfg)
    b = train_baseline(build_core_cnn(SMALL, seed=3), data, data, cfg)
    assert a.history[-1].val_loss < a.history[0].val_loss
    assert [r.val_loss for r in a.history] == [r.val_loss for r in b.history]
    assert evaluate(a.model, data.x, data.y, k=2)[0] > 0.9


class Scripted(Sequential):
    """Wraps a dense model; validation losses follow a script via the bias."""


def test_early_stopping_restores_best_epoch():
    losses = iter([1.0, 0.5, 0.7, 0.6, 0.55, 0.4])
    states = []
    model = Sequential([("out", Dense(2, 2, np.random.default_rng(0)))])
    val = LabeledArrays(np.zeros((4, 2), np.float32), np.array([0, 1, 0, 1]))

    def epoch_data(epoch, rng):
        return LabeledArrays(np.ones((4, 2), np.float32), np.array([0, 1, 0, 1]))

    import onn.classifier as clf

    real = clf.validation_scores

    def scripted(m, data, k, batch):
        states.append(m.state_dict())
        return next(losses), 0.5, 1.0

    clf.validation_scores = scripted
    try:
        res = fit(model, epoch_data, val, TrainConfig(learning_rate=0.1, batch_size=2, max_epochs=10, patience=3, top_k=1))
    finally:
        clf.validation_scores = real
    # epochs 3, 4, 5 fail to beat 0.5, so training stops after epoch 5
    assert len(res.history) == 5 and res.best_epoch == 2
    assert all(np.array_equal(model.state_dict()[k], states[1][k]) for k in states[1])


def test_history_csv(tmp_path):
    data = toy_arrays(12)
    res = train_baseline(build_core_cnn(SMALL), data, data, TrainConfig(batch_size=4, max_epochs=2, top_k=2))
    write_history_csv(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc,val_top5" and len(lines) == 3


@pytest.fixture(scope="module")
def focal_data():
    cfg = PyramidConfig(64, 16, 3)
    split = generate_shapes_dataset(3, 4, 64, seed=5)
    return cfg, build_focal_views(split.all_samples(), cfg)


def test_focal_views_layout(focal_data):
    cfg, views = focal_data
    assert views.views.shape == (12, 5, 3, 1, 16, 16)
    assert len(views.focal(2)) == 36 and len(views.all_views()) == 180
    assert np.array_equal(views.baseline().x[3], views.views[3, 4, 0])


def test_focal_epoch_uses_n_times_l_samples_and_logs_draws(focal_data):
    cfg, views = focal_data
    spec = CoreCnnSpec(input_size=16, blocks=((4, 1), (8, 1)), hidden=8, num_classes=3)
    tc = TrainConfig(batch_size=6, max_epochs=3, patience=5, seed=4, top_k=2)
    res = train_focal(build_core_cnn(spec, 1), views, views, tc)
    assert [r.samples for r in res.history] == [12 * 3] * 3
    assert len(res.draws) == 3 and all(d.shape == (12,) for d in res.draws)
    assert all("val_acc_c" in r.extra for r in res.history)
    again = train_focal(build_core_cnn(spec, 1), views, views, tc)
    assert all(np.array_equal(x, y) for x, y in zip(res.draws, again.draws))
    census = np.bincount(np.concatenate(res.draws), minlength=5)
    assert census.sum() == 36


def test_draw_census_is_roughly_uniform():
    rng = np.random.default_rng(0)
    draws = rng.integers(0, 5, size=(50, 300))
    census = np.bincount(draws.ravel(), minlength=5) / draws.size
    assert np.all(np.abs(census - 0.2) < 0.01)


def test_hidden_features_nonnegative_and_deterministic():
    model = build_core_cnn(SMALL, seed=6)
    x = np.random.default_rng(2).random((7, 1, 16, 16), dtype=np.float32)
    h = extract_hidden(model, x)
    assert h.shape == (7, 12) and np.all(h >= 0)
    assert np.array_equal(h, extract_hidden(model, x))
    assert np.array_equal(h[3:4], extract_hidden(model, x[3:4]))
    assert np.array_equal(h, extract_hidden(model, x, batch=2))


def test_hidden_matches_output_layer():
    model = build_core_cnn(SMALL, seed=6)
    x = np.random.default_rng(3).random((4, 1, 16, 16), dtype=np.float32)
    h = extract_hidden(model, x)
    out = model.layers[-1][1]
    logits = h @ out.params["weight"] + out.params["bias"]
    np.testing.assert_allclose(softmax(logits), predict_proba(model, x), atol=1e-6)


def test_empty_training_set():
    with pytest.raises(TrainingError):
        train_baseline(build_core_cnn(SMALL), LabeledArrays(np.zeros((0, 1, 16, 16), np.float32), np.zeros(0, int)),
                       toy_arrays(6), TrainConfig())
    with pytest.raises(TrainingError):
        build_focal_views([], PyramidConfig())


def test_composed_network_gradcheck():
    report = core_cnn_gradcheck(CoreCnnSpec(input_size=8, blocks=((3, 2), (4, 1)), hidden=6, num_classes=3))
    assert report.passed, report
