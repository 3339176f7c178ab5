import math
from collections import Counter

import numpy as np
import pytest

from smartmeter_ad.autoencoder import AutoencoderModel, ModelConfig, Window, loss_and_grads, mse_loss, reconstruct
from smartmeter_ad.errors import DivergenceError
from smartmeter_ad.training import (AdamState, TrainConfig, adam_step, apply_dropout, clip_gradients, global_norm,
                                    split_dataset, train)


def small_windows(n, length=6, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    return [Window(np.sin(2 * np.pi * t[:, None] / length + rng.uniform(0, 6, 4)) + 0.1 * rng.normal(size=(length, 4)),
                   origin=900 * length * k, household_id="hh0001") for k in range(n)]


def small_model(seed=0, length=6, bi=True):
    return AutoencoderModel.init(ModelConfig(window_length=length, encoder_hidden=4, decoder_hidden=4,
                                             bidirectional=bi), np.random.default_rng(seed))


def test_split_sizes_and_partition():
    items = list(range(10))
    tr, va = split_dataset(items, 0.8, seed=3)
    assert (len(tr), len(va)) == (8, 2)
    assert Counter(tr + va) == Counter(items)
    assert split_dataset(items, 0.8, seed=3) == (tr, va)
    assert len(split_dataset(list(range(15)), 0.8, 0)[0]) == 12
    assert [len(p) for p in split_dataset([1, 2], 0.99, 0)] == [1, 1]
    with pytest.raises(ValueError):
        split_dataset([1], 0.8, 0)


def test_adam_first_step_is_minus_lr():
    cfg = TrainConfig(learning_rate=1e-3)
    params = {"w": np.zeros((3, 2)), "b": np.ones(4)}
    grads = {"w": np.ones((3, 2)), "b": np.ones(4)}
    adam_step(params, grads, AdamState.zeros_like(params), cfg)
    np.testing.assert_allclose(params["w"], -1e-3, atol=1e-6 * 1e-3)
    np.testing.assert_allclose(params["b"], 1 - 1e-3, atol=1e-9)


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.arange(4.0)}
    adam_step(params, {"w": np.zeros(4)}, AdamState.zeros_like(params), TrainConfig())
    np.testing.assert_array_equal(params["w"], np.arange(4.0))


def test_adam_three_steps_match_hand_unroll():
    cfg = TrainConfig(learning_rate=0.01, adam_beta1=0.9, adam_beta2=0.999, adam_epsilon=1e-8)
    g = [0.5, -0.2, 0.3]
    params = {"w": np.array([1.0])}
    state = AdamState.zeros_like(params)
    p, m, v = 1.0, 0.0, 0.0
    for t, gt in enumerate(g, start=1):
        m = 0.9 * m + 0.1 * gt
        v = 0.999 * v + 0.001 * gt * gt
        p -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        adam_step(params, {"w": np.array([gt])}, state, cfg)
        assert params["w"][0] == pytest.approx(p, abs=1e-15)
    assert state.step == 3


def test_adam_shape_preserving_and_finite():
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(3, 5)), "b": rng.normal(size=7)}
    state = AdamState.zeros_like(params)
    for _ in range(5):
        grads = {k: rng.normal(scale=1e3, size=v.shape) for k, v in params.items()}
        adam_step(params, grads, state, TrainConfig())
    assert params["a"].shape == (3, 5) and params["b"].shape == (7,)
    assert all(np.isfinite(v).all() for v in params.values())


def test_clip_gradients():
    g = {"a": np.array([3.0, 0.0]), "b": np.zeros(2)}
    assert clip_gradients(g, 5.0) is g
    g = {"a": np.array([6.0, 0.0]), "b": np.array([0.0, 8.0])}
    out = clip_gradients(g, 5.0)
    np.testing.assert_allclose(out["a"], [3.0, 0.0])
    np.testing.assert_allclose(out["b"], [0.0, 4.0])
    assert global_norm(out) == pytest.approx(5.0, rel=1e-15)
    z = {"a": np.zeros(3)}
    np.testing.assert_array_equal(clip_gradients(z, 5.0)["a"], 0)


def test_dropout_behaviour():
    h = np.random.default_rng(0).normal(size=(10, 10))
    rng = np.random.default_rng(1)
    np.testing.assert_array_equal(apply_dropout(h, 0.0, rng, True), h)
    np.testing.assert_array_equal(apply_dropout(h, 0.7, rng, False), h)
    ones = np.ones(100_000)
    out = apply_dropout(ones, 0.5, np.random.default_rng(2), True)
    assert abs(np.mean(out > 0) - 0.5) < 0.01
    assert abs(out.mean() - 1.0) < 0.02
    with pytest.raises(ValueError):
        apply_dropout(h, 1.0, rng, True)


def test_zero_learning_rate_is_a_no_op():
    m = small_model()
    before = {k: v.copy() for k, v in m.parameters().items()}
    ws = small_windows(6)
    _, rep = train(m, ws[:4], TrainConfig(epochs=3, learning_rate=0.0, batch_size=2), validation=ws[4:])
    for k, v in m.parameters().items():
        np.testing.assert_array_equal(v, before[k])
    assert len(set(rep.train_loss)) == 1 and len(set(rep.val_loss)) == 1


def test_training_is_deterministic():
    ws = small_windows(10)
    cfg = TrainConfig(epochs=3, batch_size=3, seed=5)
    m1, r1 = train(small_model(), ws, cfg)
    m2, r2 = train(small_model(), ws, cfg)
    assert r1.train_loss == r2.train_loss and r1.val_loss == r2.val_loss
    for k, v in m1.parameters().items():
        np.testing.assert_array_equal(v, m2.parameters()[k])


def test_reported_losses_equal_independent_mse():
    ws = small_windows(8)
    m, rep = train(small_model(), ws[:6], TrainConfig(epochs=2, batch_size=4), validation=ws[6:])
    tr = np.mean([mse_loss(w, reconstruct(m, w)) for w in ws[:6]])
    va = np.mean([mse_loss(w, reconstruct(m, w)) for w in ws[6:]])
    assert rep.train_loss[-1] == pytest.approx(tr, rel=1e-12)
    assert rep.val_loss[-1] == pytest.approx(va, rel=1e-12)
    assert rep.rows()[0][0] == 1 and len(rep.rows()) == 2


def test_single_step_line_search_decreases_loss():
    w = small_windows(1)[0]
    decreased = []
    for lr in (1e-2, 1e-3, 1e-4):
        m = small_model(seed=2)
        before = mse_loss(w, reconstruct(m, w))
        train(m, [w], TrainConfig(epochs=1, learning_rate=lr, dropout_rate=0.0, clip_norm=math.inf),
              validation=[w])
        decreased.append(mse_loss(w, reconstruct(m, w)) < before)
    assert decreased[-1]


def test_gradient_descent_direction_matches_loss():
    # a plain gradient step of size eps changes the loss by about -eps * |g|^2
    m = small_model(seed=3)
    x = np.stack([w.values for w in small_windows(3)])
    loss, grads = loss_and_grads(m, x)
    eps = 1e-6
    for k, p in m.parameters().items():
        p -= eps * grads[k]
    new = loss_and_grads(m, x)[0]
    sq = sum(float(np.sum(g * g)) for g in grads.values())
    assert new - loss == pytest.approx(-eps * sq, rel=1e-3)


def test_divergence_is_reported():
    m = small_model()
    m.b_out[:] = np.inf
    with pytest.raises(DivergenceError) as exc, np.errstate(invalid="ignore"):
        train(m, small_windows(4), TrainConfig(epochs=1))
    assert exc.value.epoch == 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
