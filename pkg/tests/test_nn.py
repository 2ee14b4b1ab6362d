import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctxpbm.nn import (AdamState, LossKind, Mlp, adam_step, load_snapshot, mlp_forward, mlp_loss,
                       mlp_loss_grad, save_snapshot)


def hand_forward(W1, b1, W2, b2, x):
    s = lambda z: 1 / (1 + np.exp(-z))
    h = [s(sum(W1[j][i] * x[i] for i in range(len(x))) + b1[j]) for j in range(len(b1))]
    return [s(sum(W2[o][j] * h[j] for j in range(len(h))) + b2[o]) for o in range(len(b2))]


def numeric_grad(model, X, T, loss, W=None, h=1e-5):
    out = np.empty_like(model.theta)
    for i in range(model.theta.size):
        old = model.theta[i]
        model.theta[i] = old + h
        up = mlp_loss(model, X, T, loss, W)
        model.theta[i] = old - h
        down = mlp_loss(model, X, T, loss, W)
        model.theta[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def test_zero_parameters_output_half():
    m = Mlp(3, 2, 4)
    np.testing.assert_array_equal(m(np.array([1.0, -2.0, 3.0])), 0.5)


def test_forward_matches_hand_rolled():
    m = Mlp.init(2, 2, 1, seed=7)
    m.b1[:] = [0.1, -0.3]
    m.b2[:] = [0.2]
    want = hand_forward(m.W1.tolist(), m.b1.tolist(), m.W2.tolist(), m.b2.tolist(), [1.0, 0.0])
    assert m(np.array([1.0, 0.0]))[0] == pytest.approx(want[0], abs=1e-14)


@given(st.integers(0, 10_000))
def test_output_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    m = Mlp(3, 4, 2, theta=rng.normal(0, 3, Mlp.n_params(3, 4, 2)))
    y = m(rng.normal(0, 3, (5, 3)))
    assert np.all((y > 0) & (y < 1))


def test_wrong_input_width():
    with pytest.raises(ValueError):
        Mlp(3, 2, 1)(np.zeros(4))
    with pytest.raises(ValueError):
        Mlp(3, 2, 1, theta=np.zeros(5))


def test_views_alias_theta():
    m = Mlp(2, 3, 1)
    m.theta[:] = np.arange(m.theta.size)
    assert m.W1[0, 0] == 0 and m.b2[0] == m.theta.size - 1


def test_gradient_vanishes_at_target():
    m = Mlp.init(3, 4, 2, seed=1)
    X = np.random.default_rng(2).random((5, 3))
    assert np.allclose(mlp_loss_grad(m, X, mlp_forward(m, X), LossKind.MSE), 0)


def test_zero_weights_mask_everything():
    m = Mlp.init(3, 4, 2, seed=1)
    X = np.random.default_rng(2).random((5, 3))
    T = np.ones((5, 2))
    assert np.all(mlp_loss_grad(m, X, T, LossKind.BCE, W=np.zeros((5, 2))) == 0)


def test_gradient_check_100_cases():
    rng = np.random.default_rng(0)
    worst = 0.0
    for case in range(100):
        i, h, o = rng.integers(1, 5, 3)
        m = Mlp(i, h, o, theta=rng.normal(0, 1, Mlp.n_params(i, h, o)))
        n = rng.integers(1, 6)
        X = rng.normal(size=(n, i))
        T = rng.random((n, o))
        W = rng.random((n, o)) if case % 3 == 0 else None
        loss = LossKind.BCE if case % 2 else LossKind.MSE
        a = mlp_loss_grad(m, X, T, loss, W)
        b = numeric_grad(m, X, T, loss, W)
        err = np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
        worst = max(worst, err)
    assert worst < 1e-4


def test_loss_input_validation():
    m = Mlp(2, 2, 1)
    with pytest.raises(ValueError):
        mlp_loss(m, np.zeros((0, 2)), np.zeros((0, 1)), LossKind.BCE)
    with pytest.raises(ValueError):
        mlp_loss(m, np.zeros((1, 2)), [[1.5]], LossKind.BCE)


def test_bce_is_stable_for_large_logits():
    m = Mlp(1, 1, 1)
    m.b2[:] = 800.0
    assert mlp_loss(m, [[0.0]], [[0.0]], LossKind.BCE) == pytest.approx(800.0)


def test_adam_zero_gradient_is_noop():
    m = Mlp.init(2, 2, 2, seed=3)
    before = m.theta.copy()
    adam_step(m, np.zeros_like(m.theta), AdamState.for_model(m))
    np.testing.assert_array_equal(m.theta, before)


def test_adam_first_step_is_signed_alpha():
    m = Mlp.init(2, 2, 2, seed=3)
    before = m.theta.copy()
    g = np.random.default_rng(4).normal(size=m.theta.size)
    state = AdamState.for_model(m, alpha=0.01)
    adam_step(m, g, state)
    np.testing.assert_allclose(m.theta - before, -0.01 * np.sign(g), rtol=1e-5)
    assert state.t == 1


def test_adam_solves_quadratic():
    m = Mlp(1, 1, 1)  # used only as a parameter container
    state = AdamState.for_model(m, alpha=0.01)
    target = np.array([1.0, -2.0, 0.5, 3.0])
    for _ in range(5000):
        adam_step(m, 2 * (m.theta - target), state)
    assert np.max(np.abs(m.theta - target)) < 1e-3


def test_adam_rejects_bad_gradients():
    m = Mlp(1, 1, 1)
    with pytest.raises(FloatingPointError):
        adam_step(m, np.array([np.nan, 0, 0, 0]), AdamState.for_model(m))
    with pytest.raises(ValueError):
        adam_step(m, np.zeros(3), AdamState.for_model(m))


def test_snapshot_roundtrip(tmp_path):
    m = Mlp.init(3, 2, 4, seed=9)
    state = AdamState.for_model(m)
    state.t = 17
    save_snapshot(tmp_path / "m.json", m, state)
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["step"] == 17 and d["seed"] == 9
    back = load_snapshot(tmp_path / "m.json")
    np.testing.assert_array_equal(back.theta, m.theta)
    assert (back.input_dim, back.hidden_dim, back.output_dim) == (3, 2, 4)
