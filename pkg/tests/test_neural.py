"""Feed-forward classifier: forward, backprop, training, serialization."""

import numpy as np
import pytest

import helpers
from fdialab import neural


def tiny_specs(input_dim=4, hidden=6, dropout=0.0):
    return (
        neural.LayerSpec(input_dim, hidden, "relu", dropout),
        neural.LayerSpec(hidden, 2, "identity"),
    )


def tiny_model(seed=0, **kw):
    return neural.init_model(tiny_specs(**kw), temperature=1.0, rng_seed=seed)


def separable_blobs(count=200, seed=0):
    rng = np.random.default_rng(seed)
    half = count // 2
    x = np.vstack(
        [
            rng.normal([-2.0, -2.0], 0.5, size=(half, 2)),
            rng.normal([2.0, 2.0], 0.5, size=(count - half, 2)),
        ]
    )
    y = np.array([0] * half + [1] * (count - half))
    return x, y


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def test_init_deterministic():
    a = tiny_model(seed=7)
    b = tiny_model(seed=7)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    c = tiny_model(seed=8)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_init_glorot_bounds_and_zero_biases():
    model = tiny_model()
    for spec, w, b in zip(model.specs, model.weights, model.biases):
        s = np.sqrt(6.0 / (spec.input_dim + spec.output_dim))
        assert np.abs(w).max() <= s
        assert np.array_equal(b, np.zeros(spec.output_dim))


def test_init_validates_specs():
    with pytest.raises(ValueError, match="at least one layer"):
        neural.init_model((), temperature=1.0, rng_seed=0)
    broken = (neural.LayerSpec(4, 6), neural.LayerSpec(5, 2))
    with pytest.raises(ValueError, match="chain"):
        neural.init_model(broken, temperature=1.0, rng_seed=0)
    with pytest.raises(ValueError, match="final layer"):
        neural.init_model((neural.LayerSpec(4, 3),), temperature=1.0, rng_seed=0)
    with pytest.raises(ValueError, match="temperature"):
        neural.init_model(tiny_specs(), temperature=0.0, rng_seed=0)


def test_layer_spec_validation():
    with pytest.raises(ValueError, match="positive"):
        neural.LayerSpec(0, 4)
    with pytest.raises(ValueError, match="activation"):
        neural.LayerSpec(4, 4, "tanh")
    with pytest.raises(ValueError, match="dropout"):
        neural.LayerSpec(4, 4, "relu", 1.0)


def test_detector_architecture_parameter_count():
    # widths 186 -> 128 -> 64 -> 16 -> 2 with biases:
    expected = 186 * 128 + 128 + 128 * 64 + 64 + 64 * 16 + 16 + 16 * 2 + 2
    assert expected == 33266
    model = neural.init_model(neural.detector_specs(186), temperature=1.0, rng_seed=0)
    assert neural.parameter_count(model) == expected
    dropout_rates = [spec.dropout_rate for spec in model.specs]
    assert dropout_rates == [0.0, 0.0, 0.25, 0.0]


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def test_probabilities_sum_to_one():
    model = tiny_model()
    x = np.random.default_rng(0).normal(size=(50, 4)) * 10
    probs, _ = neural.forward_batch(model, x)
    assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9
    assert np.all(probs > 0) and np.all(probs < 1)


def test_zero_weights_give_uniform_output():
    model = tiny_model()
    for w in model.weights:
        w[:] = 0.0
    probs, _ = neural.forward(model, np.array([1.0, -2.0, 3.0, 4.0]))
    assert np.allclose(probs, [0.5, 0.5], atol=1e-12)


def test_high_temperature_limit_is_uniform():
    model = tiny_model(seed=3)
    x = np.array([0.5, 1.5, -0.5, 2.0])
    probs = neural.predict_proba(model, x[None, :], temperature=1e6)[0]
    assert np.abs(probs - 0.5).max() <= 1e-4


def test_infer_mode_deterministic_despite_dropout():
    model = neural.init_model(tiny_specs(dropout=0.5), temperature=1.0, rng_seed=1)
    x = np.random.default_rng(2).normal(size=(3, 4))
    p1, _ = neural.forward_batch(model, x)
    p2, _ = neural.forward_batch(model, x)
    assert np.array_equal(p1, p2)


def test_train_mode_requires_rng_and_differs():
    model = neural.init_model(tiny_specs(dropout=0.5), temperature=1.0, rng_seed=1)
    x = np.random.default_rng(3).normal(size=(5, 4))
    with pytest.raises(ValueError, match="rng"):
        neural.forward_batch(model, x, mode="train")
    rng = np.random.default_rng(4)
    p1, _ = neural.forward_batch(model, x, mode="train", rng=rng)
    p2, _ = neural.forward_batch(model, x, mode="train", rng=rng)
    assert not np.array_equal(p1, p2)


def test_forward_validates_input():
    model = tiny_model()
    with pytest.raises(ValueError, match="width"):
        neural.forward(model, np.zeros(5))
    with pytest.raises(ValueError, match="finite"):
        neural.forward(model, np.array([1.0, np.nan, 0.0, 0.0]))


def test_temperature_never_changes_argmax():
    model = tiny_model(seed=5)
    x = np.random.default_rng(6).normal(size=(40, 4))
    base = neural.predict_proba(model, x, temperature=1.0).argmax(axis=1)
    for t in (0.1, 2.0, 17.0, 900.0):
        assert np.array_equal(
            neural.predict_proba(model, x, temperature=t).argmax(axis=1), base
        )


def test_dropout_expectation_matches_infer_on_linear_net():
    # one identity layer with dropout on its input side is linear, so the
    # average of train-mode outputs converges to the infer-mode output
    specs = (neural.LayerSpec(3, 2, "identity", 0.25),)
    model = neural.init_model(specs, temperature=1.0, rng_seed=7)
    x = np.array([[1.0, -2.0, 0.5]])
    rng = np.random.default_rng(8)
    draws = 10000
    logits = np.zeros((draws, 2))
    for i in range(draws):
        _, cache = neural.forward_batch(model, x, mode="train", rng=rng)
        logits[i] = cache["logits"][0]
    _, infer_cache = neural.forward_batch(model, x)
    se = logits.std(axis=0) / np.sqrt(draws)
    assert np.all(np.abs(logits.mean(axis=0) - infer_cache["logits"][0]) <= 3 * se + 1e-12)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    for trial in range(10):
        model = neural.init_model(
            tiny_specs(input_dim=5, hidden=7), temperature=1.0, rng_seed=trial
        )
        x = rng.normal(size=5)
        label = int(trial % 2)
        grad = neural.input_gradient(model, x, label)

        def loss(v, _m=model, _l=label):
            probs, _ = neural.forward(_m, v)
            return -np.log(probs[_l])

        fd = helpers.finite_difference_input_gradient(loss, x)
        assert helpers.relative_error(grad, fd) <= 1e-4


def test_weight_gradients_match_finite_differences():
    model = neural.init_model(tiny_specs(input_dim=3, hidden=4), temperature=1.0, rng_seed=11)
    x = np.random.default_rng(12).normal(size=(6, 3))
    y = np.array([0, 1, 1, 0, 1, 0])
    _, w_grads, b_grads = neural.loss_and_gradients(model, x, y)

    def total_loss():
        probs, _ = neural.forward_batch(model, x)
        return float(-np.log(probs[np.arange(6), y]).sum())

    step = 1e-5
    for layer in range(len(model.weights)):
        w = model.weights[layer]
        flat_checks = [(0, 0), (w.shape[0] - 1, w.shape[1] - 1)]
        for i, j in flat_checks:
            w[i, j] += step
            up = total_loss()
            w[i, j] -= 2 * step
            down = total_loss()
            w[i, j] += step
            fd = (up - down) / (2 * step)
            assert abs(w_grads[layer][i, j] - fd) <= 1e-4 * max(1.0, abs(fd))
        b = model.biases[layer]
        b[0] += step
        up = total_loss()
        b[0] -= 2 * step
        down = total_loss()
        b[0] += step
        fd = (up - down) / (2 * step)
        assert abs(b_grads[layer][0] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_zero_weight_network_has_zero_input_gradient():
    model = tiny_model()
    for w in model.weights:
        w[:] = 0.0
    grad = neural.input_gradient(model, np.ones(4), 1)
    assert np.array_equal(grad, np.zeros(4))


def test_binary_label_gradients_are_antiparallel():
    # p0 * grad(label 0) = -p1 * grad(label 1): both are multiples of the
    # logit-gap gradient, weighted by the opposite class probability
    model = tiny_model(seed=13)
    x = np.random.default_rng(14).normal(size=4)
    probs, _ = neural.forward(model, x)
    g0 = neural.input_gradient(model, x, 0)
    g1 = neural.input_gradient(model, x, 1)
    assert np.abs(probs[0] * g0 + probs[1] * g1).max() <= 1e-12
    assert float(g0 @ g1) < 0


def test_escape_gradient_is_ce_gradient_over_off_probability():
    model = tiny_model(seed=15)
    x = np.random.default_rng(16).normal(size=4)
    probs, _ = neural.forward(model, x)
    for label in (0, 1):
        ce = neural.input_gradient(model, x, label)
        esc = neural.escape_gradient(model, x, label)
        assert np.abs(ce - probs[1 - label] * esc).max() <= 1e-12


def test_input_gradient_batch_matches_single():
    model = tiny_model(seed=17)
    x = np.random.default_rng(18).normal(size=(4, 4))
    labels = np.array([0, 1, 0, 1])
    batch = neural.input_gradient_batch(model, x, labels)
    for i in range(4):
        single = neural.input_gradient(model, x[i], int(labels[i]))
        assert np.abs(batch[i] - single).max() <= 1e-12


def test_input_sensitivity_is_mean_gradient_norm():
    model = tiny_model(seed=19)
    x = np.random.default_rng(20).normal(size=(8, 4))
    labels = np.array([0, 1] * 4)
    grads = neural.input_gradient_batch(model, x, labels)
    expected = float(np.linalg.norm(grads, axis=1).mean())
    assert neural.input_sensitivity(model, x, labels) == pytest.approx(expected)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_training_separates_blobs():
    x, y = separable_blobs()
    model = neural.init_model(tiny_specs(input_dim=2, hidden=8), temperature=1.0, rng_seed=21)
    cfg = neural.TrainConfig(learning_rate=0.05, batch_size=16, epochs=200, rng_seed=22)
    log = neural.train(model, x, y, cfg)
    assert len(log) == 200
    assert log[-1]["accuracy"] >= 0.99


def test_zero_learning_rate_keeps_weights():
    x, y = separable_blobs(count=64)
    model = neural.init_model(tiny_specs(input_dim=2), temperature=1.0, rng_seed=23)
    before = [w.copy() for w in model.weights]
    with pytest.raises(ValueError):
        neural.TrainConfig(learning_rate=0.0)
    # smallest representable positive rate acts as "no movement" sanity proxy
    cfg = neural.TrainConfig(learning_rate=1e-300, batch_size=16, epochs=2, rng_seed=24)
    neural.train(model, x, y, cfg)
    for w_before, w_after in zip(before, model.weights):
        assert np.allclose(w_before, w_after, atol=1e-250)


def test_training_deterministic():
    x, y = separable_blobs(count=120, seed=25)
    cfg = neural.TrainConfig(learning_rate=0.05, batch_size=16, epochs=5, rng_seed=26)
    m1 = neural.init_model(tiny_specs(input_dim=2, dropout=0.25), temperature=1.0, rng_seed=27)
    m2 = neural.init_model(tiny_specs(input_dim=2, dropout=0.25), temperature=1.0, rng_seed=27)
    neural.train(m1, x, y, cfg)
    neural.train(m2, x, y, cfg)
    for w1, w2 in zip(m1.weights, m2.weights):
        assert np.array_equal(w1, w2)


def test_train_rejects_bad_labels_and_empty_data():
    model = tiny_model()
    cfg = neural.TrainConfig(epochs=1)
    with pytest.raises(ValueError, match="empty"):
        neural.train(model, np.zeros((0, 4)), np.zeros(0, dtype=int), cfg)
    with pytest.raises(ValueError, match="labels"):
        neural.train(model, np.zeros((2, 4)), np.array([0, 2]), cfg)


def test_augmenter_can_append_rows():
    x, y = separable_blobs(count=64, seed=28)
    seen = []

    def augmenter(model, indices, batch_x, batch_targets, rng):
        seen.append(len(indices))
        return np.vstack([batch_x, batch_x[:1]]), np.vstack([batch_targets, batch_targets[:1]])

    model = neural.init_model(tiny_specs(input_dim=2), temperature=1.0, rng_seed=29)
    cfg = neural.TrainConfig(batch_size=16, epochs=1, rng_seed=30)
    neural.train(model, x, y, cfg, augmenter=augmenter)
    assert sum(seen) == 64


def test_soft_probability_targets_accepted():
    x, y = separable_blobs(count=64, seed=31)
    targets = np.zeros((64, 2))
    targets[np.arange(64), y] = 0.9
    targets[np.arange(64), 1 - y] = 0.1
    model = neural.init_model(tiny_specs(input_dim=2), temperature=1.0, rng_seed=32)
    cfg = neural.TrainConfig(batch_size=16, epochs=30, rng_seed=33)
    neural.train(model, x, targets, cfg)
    assert neural.evaluate(model, x, y)["accuracy"] >= 0.95


# ---------------------------------------------------------------------------
# evaluation and serialization
# ---------------------------------------------------------------------------


def test_evaluate_perfect_and_constant():
    x, y = separable_blobs(count=20, seed=34)
    model = neural.init_model(tiny_specs(input_dim=2, hidden=8), temperature=1.0, rng_seed=35)
    cfg = neural.TrainConfig(learning_rate=0.05, batch_size=8, epochs=200, rng_seed=36)
    neural.train(model, x, y, cfg)
    stats = neural.evaluate(model, x, y)
    assert stats["accuracy"] == 1.0
    assert stats["recall"] == 1.0

    constant = tiny_model()
    for w in constant.weights:
        w[:] = 0.0
    constant.biases[-1][:] = np.array([5.0, -5.0])  # always Normal
    stats = neural.evaluate(constant, np.random.default_rng(37).normal(size=(10, 4)),
                            np.array([0, 1] * 5))
    assert stats["accuracy"] == 0.5
    assert stats["recall"] == 0.0
    tn, fp = stats["confusion"][0]
    fn, tp = stats["confusion"][1]
    assert tn + fp + fn + tp == 10


def test_save_load_round_trip():
    model = neural.init_model(tiny_specs(dropout=0.25), temperature=3.0, rng_seed=38)
    payload = neural.save_model(model)
    again = neural.load_model(payload)
    assert again.temperature == model.temperature
    x = np.random.default_rng(39).normal(size=(5, 4))
    p1, _ = neural.forward_batch(model, x)
    p2, _ = neural.forward_batch(again, x)
    assert np.array_equal(p1, p2)
    for w1, w2 in zip(model.weights, again.weights):
        assert np.array_equal(w1, w2)


def test_load_rejects_corrupt_and_versioned_payloads():
    model = tiny_model()
    payload = neural.save_model(model)
    with pytest.raises(neural.ModelFormatError):
        neural.load_model(payload[: len(payload) // 2])
    import json

    doc = json.loads(payload)
    doc["version"] = 99
    with pytest.raises(neural.ModelFormatError, match="version"):
        neural.load_model(json.dumps(doc).encode())
    doc["version"] = 1
    doc["format"] = "something-else"
    with pytest.raises(neural.ModelFormatError):
        neural.load_model(json.dumps(doc).encode())
