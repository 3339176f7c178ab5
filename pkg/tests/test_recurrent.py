import math

import numpy as np
import pytest

from conftest import assert_grad_close, central_difference
from smartmeter_ad.recurrent import (BiLstmParams, LstmParams, LstmState, bilstm_backward, bilstm_forward,
                                     lstm_backward, lstm_cell_forward, lstm_sequence_forward)


def random_params(D, H, seed):
    rng = np.random.default_rng(seed)
    p = LstmParams.init(D, H, rng)
    for n, a in p.tensors().items():
        if n.startswith("b_"):
            a += rng.normal(0, 0.5, a.shape)
    return p


def straight_line(p, xs):
    """Scalar-loop evaluation of the gate equations, independent of the library."""
    H, D = p.W_ii.shape
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))  # noqa: E731
    h, c = [0.0] * H, [0.0] * H
    out = []
    for x in xs:
        def pre(gate, j):
            Wi, Wh = getattr(p, "W_i" + gate), getattr(p, "W_h" + gate)
            return (sum(Wi[j, k] * x[k] for k in range(D)) + getattr(p, "b_i" + gate)[j]
                    + sum(Wh[j, k] * h[k] for k in range(H)) + getattr(p, "b_h" + gate)[j])
        i = [sig(pre("i", j)) for j in range(H)]
        f = [sig(pre("f", j)) for j in range(H)]
        g = [math.tanh(pre("g", j)) for j in range(H)]
        o = [sig(pre("o", j)) for j in range(H)]
        c = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
        h = [o[j] * math.tanh(c[j]) for j in range(H)]
        out.append(list(h))
    return np.array(out)


def test_zero_params_cell():
    p = LstmParams.zeros(3, 2)
    state, cache = lstm_cell_forward(p, np.array([1.0, -2.0, 3.0]))
    for gate in (cache.i, cache.f, cache.o):
        np.testing.assert_array_equal(gate, [0.5, 0.5])
    np.testing.assert_array_equal(cache.g, [0, 0])
    np.testing.assert_array_equal(state.c, [0, 0])
    np.testing.assert_array_equal(state.h, [0, 0])


def test_zero_params_carry_cell_state():
    p = LstmParams.zeros(1, 1)
    state, _ = lstm_cell_forward(p, np.array([0.3]), LstmState(np.array([0.0]), np.array([2.0])))
    assert state.c[0] == 1.0
    assert state.h[0] == pytest.approx(0.5 * math.tanh(1.0), abs=1e-15)
    assert state.h[0] == pytest.approx(0.3807970779778824, abs=1e-15)


def test_cell_matches_straight_line_oracle():
    p = random_params(3, 2, 0)
    x = np.random.default_rng(1).normal(size=3)
    state, _ = lstm_cell_forward(p, x)
    np.testing.assert_allclose(state.h, straight_line(p, [x])[0], atol=1e-14)


def test_sequence_matches_oracle_and_cell():
    p = random_params(3, 4, 2)
    xs = np.random.default_rng(3).normal(size=(7, 3))
    hs, cache = lstm_sequence_forward(p, xs)
    np.testing.assert_allclose(hs, straight_line(p, xs), atol=1e-13)
    # stepping the reference cell by hand gives the same states
    state = None
    for t in range(len(xs)):
        state, _ = lstm_cell_forward(p, xs[t], state)
        np.testing.assert_allclose(cache.h[t, 0], state.h, atol=1e-14)
        np.testing.assert_allclose(cache.c[t, 0], state.c, atol=1e-14)


def test_length_one_and_zero_params():
    p = random_params(2, 3, 4)
    x = np.array([[0.4, -1.2]])
    hs, _ = lstm_sequence_forward(p, x)
    state, _ = lstm_cell_forward(p, x[0])
    np.testing.assert_allclose(hs[0], state.h, atol=1e-15)
    hs, _ = lstm_sequence_forward(LstmParams.zeros(2, 3), np.random.default_rng(0).normal(size=(6, 2)))
    np.testing.assert_array_equal(hs, 0)


def test_prefix_property():
    p = random_params(2, 3, 5)
    xs = np.random.default_rng(6).normal(size=(9, 2))
    full, _ = lstm_sequence_forward(p, xs)
    for k in (1, 4, 8):
        part, _ = lstm_sequence_forward(p, xs[:k])
        np.testing.assert_array_equal(part, full[:k])


def test_batched_equals_per_sequence():
    p = random_params(2, 3, 7)
    xs = np.random.default_rng(8).normal(size=(5, 4, 2))
    hs, _ = lstm_sequence_forward(p, xs)
    for b in range(4):
        one, _ = lstm_sequence_forward(p, xs[:, b])
        np.testing.assert_allclose(hs[:, b], one, atol=1e-14)


def test_gate_ranges_and_cell_decomposition():
    p = random_params(3, 5, 9)
    xs = np.random.default_rng(10).normal(scale=3.0, size=(20, 3))
    _, cache = lstm_sequence_forward(p, xs)
    for t in range(len(cache)):
        g = cache[t]
        for gate in (g.i, g.f, g.o):
            assert ((gate > 0) & (gate < 1)).all()
        assert ((g.g > -1) & (g.g < 1)).all()
        np.testing.assert_array_equal(g.c, g.f * g.c_prev + g.i * g.g)


def test_bilstm_single_step():
    p = BiLstmParams(random_params(2, 3, 11), random_params(2, 3, 12))
    x = np.array([[0.5, -0.25]])
    out, _ = bilstm_forward(p, x)
    hf, _ = lstm_cell_forward(p.forward, x[0])
    hb, _ = lstm_cell_forward(p.backward, x[0])
    np.testing.assert_allclose(out[0], np.concatenate([hf.h, hb.h]), atol=1e-15)


def test_bilstm_palindrome_symmetry():
    q = random_params(2, 3, 13)
    p = BiLstmParams(q, q.copy())
    half = np.random.default_rng(14).normal(size=(4, 2))
    xs = np.concatenate([half, half[::-1]])
    out, _ = bilstm_forward(p, xs)
    T = len(xs)
    for t in range(T):
        np.testing.assert_allclose(out[t, :3], out[T - 1 - t, 3:], atol=1e-15)


def test_bilstm_reverse_with_swapped_params():
    p = BiLstmParams(random_params(2, 3, 15), random_params(2, 3, 16))
    xs = np.random.default_rng(17).normal(size=(6, 2))
    out, _ = bilstm_forward(p, xs)
    rev, _ = bilstm_forward(BiLstmParams(p.backward, p.forward), xs[::-1])
    np.testing.assert_allclose(rev[::-1][:, 3:], out[:, :3], atol=1e-15)
    np.testing.assert_allclose(rev[::-1][:, :3], out[:, 3:], atol=1e-15)


def test_bilstm_zero_params():
    p = BiLstmParams(LstmParams.zeros(2, 3), LstmParams.zeros(2, 3))
    out, _ = bilstm_forward(p, np.ones((5, 2)))
    assert out.shape == (5, 6)
    np.testing.assert_array_equal(out, 0)


def test_zero_upstream_gives_zero_gradients():
    p = random_params(2, 3, 18)
    _, cache = lstm_sequence_forward(p, np.random.default_rng(19).normal(size=(5, 2)))
    grads, dxs = lstm_backward(cache, p, np.zeros((5, 3)))
    for a in grads.tensors().values():
        np.testing.assert_array_equal(a, 0)
    np.testing.assert_array_equal(dxs, 0)


def test_all_sixteen_gradients_match_finite_differences():
    p = random_params(2, 3, 20)
    rng = np.random.default_rng(21)
    xs = rng.normal(size=(5, 2))
    U = rng.normal(size=(5, 3))

    def loss():
        hs, _ = lstm_sequence_forward(p, xs)
        return float(np.sum(U * hs))

    _, cache = lstm_sequence_forward(p, xs)
    grads, dxs = lstm_backward(cache, p, U)
    analytic = grads.tensors()
    assert len(analytic) == 16
    for name, arr in p.tensors().items():
        assert_grad_close(analytic[name], central_difference(loss, arr), name=name)
    assert_grad_close(dxs, central_difference(loss, xs), name="inputs")


def test_input_gradient_modes_agree():
    p = random_params(2, 3, 22)
    rng = np.random.default_rng(23)
    xs = rng.normal(size=(5, 4, 2))
    U = rng.normal(size=(5, 4, 3))
    _, cache = lstm_sequence_forward(p, xs)
    g_seq, d_seq = lstm_backward(cache, p, U, "sequence")
    g_sum, d_sum = lstm_backward(cache, p, U, "sum")
    g_none, d_none = lstm_backward(cache, p, U, "none")
    np.testing.assert_allclose(d_sum, d_seq.sum(axis=0), atol=1e-13)
    assert d_none is None
    for n in LstmParams.names():
        np.testing.assert_array_equal(getattr(g_seq, n), getattr(g_none, n))
        np.testing.assert_array_equal(getattr(g_seq, n), getattr(g_sum, n))


def test_bilstm_gradients_match_finite_differences():
    p = BiLstmParams(random_params(2, 2, 24), random_params(2, 2, 25))
    rng = np.random.default_rng(26)
    xs = rng.normal(size=(4, 2))
    U = rng.normal(size=(4, 4))

    def loss():
        out, _ = bilstm_forward(p, xs)
        return float(np.sum(U * out))

    out, caches = bilstm_forward(p, xs)
    grads, dxs = bilstm_backward(caches, p, U)
    for side in ("forward", "backward"):
        for name, arr in getattr(p, side).tensors().items():
            assert_grad_close(getattr(getattr(grads, side), name), central_difference(loss, arr),
                              name=f"{side}.{name}")
    assert_grad_close(dxs, central_difference(loss, xs), name="inputs")


def test_single_unit_hand_chain_rule():
    # one step, one unit, zero initial state: h = o * tanh(i * g)
    vals = dict(W_ii=0.5, W_if=-0.3, W_ig=0.8, W_io=0.2, b_ii=0.1, b_if=0.0, b_ig=-0.2, b_io=0.3)
    p = LstmParams.zeros(1, 1)
    for n, v in vals.items():
        getattr(p, n)[...] = v
    x = 1.5
    sig = lambda z: 1 / (1 + math.exp(-z))  # noqa: E731
    i = sig(0.5 * x + 0.1)
    g = math.tanh(0.8 * x - 0.2)
    o = sig(0.2 * x + 0.3)
    c = i * g
    dh_dc = o * (1 - math.tanh(c) ** 2)
    expected = {
        "W_io": math.tanh(c) * o * (1 - o) * x,
        "W_ii": dh_dc * g * i * (1 - i) * x,
        "W_ig": dh_dc * i * (1 - g * g) * x,
        "b_ig": dh_dc * i * (1 - g * g),
        "W_if": 0.0,  # c_prev = 0, so the forget gate has no effect
    }
    _, cache = lstm_sequence_forward(p, np.array([[x]]))
    grads, _ = lstm_backward(cache, p, np.array([[1.0]]))
    for n, v in expected.items():
        assert getattr(grads, n)[0].item() == pytest.approx(v, rel=1e-12, abs=1e-15), n
    # input and recurrent biases enter as a sum
    assert grads.b_hg[0] == grads.b_ig[0]
