import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fightnet import tensor as T
from fightnet.gradcheck import grad_check
from fightnet.recurrent import (
    GATES,
    LSTM,
    CellState,
    ConvLSTM,
    convlstm_sequence,
    convlstm_sequence_backward,
    convlstm_step,
    lstm_step,
)
from fightnet.subjects import make_subject
from fightnet.tensor import make_rng

F64 = np.float64


def random_conv_params(rng, cin, ch, k, scale=0.5):
    p = {}
    for g in GATES:
        p[f"w_x_{g}"] = scale * rng.standard_normal((ch, cin, k, k))
        p[f"w_h_{g}"] = scale * rng.standard_normal((ch, ch, k, k))
        p[f"b_{g}"] = scale * rng.standard_normal(ch)
    return p


def zero_state(ch, h, w):
    return CellState(np.zeros((ch, h, w)), np.zeros((ch, h, w)))


def straight_line_step(x, h, c, p):
    """Gate equations written out one by one from raw kernels."""
    pad = (p["w_x_i"].shape[-1] - 1) // 2

    def pre(g):
        z = T.conv2d(x, p[f"w_x_{g}"], None, 1, pad) + T.conv2d(h, p[f"w_h_{g}"], None, 1, pad)
        return z + p[f"b_{g}"][:, None, None]

    i = T.sigmoid(pre("i"))
    f = T.sigmoid(pre("f"))
    g = T.tanh(pre("c"))
    c_new = T.pointwise("add", T.pointwise("hadamard", g, i), T.pointwise("hadamard", c, f))
    o = T.sigmoid(pre("o"))
    h_new = T.pointwise("hadamard", o, T.tanh(c_new))
    return h_new, c_new


class TestConvLSTMStep:

    def test_zero_weights(self):
        p = random_conv_params(make_rng(0), 2, 3, 3, scale=0.0)
        out = convlstm_step(make_rng(1).standard_normal((2, 4, 4)), zero_state(3, 4, 4), p)
        assert not out.h.any() and not out.c.any()

    def test_memory_preserved_when_saturated(self):
        p = random_conv_params(make_rng(0), 2, 3, 3, scale=0.0)
        p["b_f"][...] = 20.0
        p["b_i"][...] = -20.0
        c_prev = make_rng(2).standard_normal((3, 4, 4))
        state = CellState(np.zeros((3, 4, 4)), c_prev)
        out = convlstm_step(make_rng(1).standard_normal((2, 4, 4)), state, p)
        np.testing.assert_allclose(out.c, c_prev, atol=1e-6, rtol=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_bit_identical_to_straight_line(self, seed):
        rng = make_rng(seed)
        p = random_conv_params(rng, 2, 3, 3)
        x = rng.standard_normal((2, 4, 4))
        h, c = rng.standard_normal((3, 4, 4)), rng.standard_normal((3, 4, 4))
        out = convlstm_step(x, CellState(h, c), p)
        h_ref, c_ref = straight_line_step(x, h, c, p)
        np.testing.assert_array_equal(out.h, h_ref)
        np.testing.assert_array_equal(out.c, c_ref)

    def test_shape_mismatch(self):
        p = random_conv_params(make_rng(0), 2, 3, 3)
        with pytest.raises(T.ShapeError):
            convlstm_step(np.zeros((2, 5, 5)), zero_state(3, 4, 4), p)
        with pytest.raises(T.ShapeError):
            convlstm_step(np.zeros((1, 4, 4)), zero_state(3, 4, 4), p)

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_spatial_dims_preserved(self, k):
        p = random_conv_params(make_rng(0), 2, 3, k)
        out = convlstm_step(make_rng(1).standard_normal((2, 5, 7)), zero_state(3, 5, 7), p)
        assert out.h.shape == out.c.shape == (3, 5, 7)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ConvLSTM(2, 3, 4)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 5.0))
    def test_activation_bounds(self, seed, scale):
        rng = make_rng(seed)
        p = random_conv_params(rng, 2, 2, 3, scale)
        h = np.tanh(rng.standard_normal((2, 3, 3)))
        out = convlstm_step(scale * rng.standard_normal((2, 3, 3)), CellState(h, rng.standard_normal((2, 3, 3))), p)
        assert np.all(np.abs(out.h) <= 1.0)
        assert np.all(np.isfinite(out.c))


class TestConvLSTMSequence:

    def test_length_one_is_step(self):
        rng = make_rng(0)
        p = random_conv_params(rng, 2, 3, 3)
        x = rng.standard_normal((2, 4, 4))
        h, _ = convlstm_sequence([x], p)
        np.testing.assert_array_equal(h, convlstm_step(x, zero_state(3, 4, 4), p).h)

    def test_zero_weights_zero_output(self):
        p = random_conv_params(make_rng(0), 2, 3, 3, scale=0.0)
        xs = make_rng(1).standard_normal((5, 2, 4, 4)) * 10
        h, _ = convlstm_sequence(list(xs), p)
        assert not h.any()

    def test_empty(self):
        with pytest.raises(ValueError):
            convlstm_sequence([], random_conv_params(make_rng(0), 2, 3, 3))

    def test_mixed_dims(self):
        p = random_conv_params(make_rng(0), 2, 3, 3)
        with pytest.raises(T.ShapeError):
            convlstm_sequence([np.zeros((2, 4, 4)), np.zeros((2, 5, 5))], p)

    def test_matches_layer_forward(self):
        rng = make_rng(4)
        cell = ConvLSTM(2, 3, 3, rng, F64)
        xs = rng.standard_normal((1, 4, 2, 5, 5))
        h, _ = convlstm_sequence(list(xs[0]), cell.params)
        np.testing.assert_allclose(cell.forward(xs)[0], h, rtol=1e-12, atol=1e-14)

    def test_functional_bptt_length_three(self):
        rng = make_rng(7)
        p = random_conv_params(rng, 2, 2, 3)
        xs = [rng.standard_normal((2, 3, 3)) for _ in range(3)]
        proj = rng.standard_normal((2, 3, 3))

        def loss():
            return float(np.sum(proj * convlstm_sequence(xs, p)[0]))

        _, cache = convlstm_sequence(xs, p)
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dxs = convlstm_sequence_backward(cache, proj, p, grads)

        from conftest import central_diff, rel_err
        for name in p:
            assert rel_err(grads[name], central_diff(loss, p[name], 1e-5)) <= 1e-4, name
        for t in range(3):
            assert rel_err(dxs[t], central_diff(loss, xs[t], 1e-5)) <= 1e-4

    @pytest.mark.parametrize("kind", ["convlstm", "lstm"])
    @pytest.mark.parametrize("steps", [1, 2, 3, 4])
    def test_bptt_gradcheck(self, kind, steps):
        subject, x, kw = make_subject(f"{kind}-{steps}")
        rep = grad_check(subject, x, **kw)
        assert rep.max_error <= 1e-4, rep


class TestLSTM:

    def test_zero_weights(self):
        cell = LSTM(4, 3)
        out = lstm_step(np.ones(4), CellState(np.zeros(3), np.zeros(3)), cell.params)
        assert not out.h.any()

    def test_one_unit_hand_case(self):
        p = {}
        for g in GATES:
            p[f"w_x_{g}"] = np.ones((1, 1))
            p[f"w_h_{g}"] = np.ones((1, 1))
            p[f"b_{g}"] = np.zeros(1)
        out = lstm_step(np.zeros(1), CellState(np.zeros(1), np.zeros(1)), p)
        assert out.h[0] == 0.0

    def test_one_unit_nonzero(self):
        p = {}
        for g in GATES:
            p[f"w_x_{g}"] = np.ones((1, 1))
            p[f"w_h_{g}"] = np.zeros((1, 1))
            p[f"b_{g}"] = np.zeros(1)
        out = lstm_step(np.ones(1), CellState(np.zeros(1), np.zeros(1)), p)
        s = 1 / (1 + np.exp(-1.0))
        c = np.tanh(1.0) * s
        assert out.c[0] == pytest.approx(c, rel=1e-15)
        assert out.h[0] == pytest.approx(s * np.tanh(c), rel=1e-15)

    def test_shape_mismatch(self):
        cell = LSTM(4, 3)
        with pytest.raises(T.ShapeError):
            lstm_step(np.ones(5), CellState(np.zeros(3), np.zeros(3)), cell.params)

    def test_param_count(self):
        cell = LSTM(7, 5)
        assert sum(v.size for v in cell.params.values()) == LSTM.param_count(7, 5)
        assert LSTM.param_count(4096, 1000) == 20_388_000


@pytest.mark.parametrize("cin,ch,k", [(2, 3, 3), (256, 256, 3), (1, 1, 1), (3, 5, 5)])
def test_convlstm_param_count(cin, ch, k):
    assert ConvLSTM.param_count(cin, ch, k) == 4 * (k * k * cin * ch + k * k * ch * ch + ch)
    if cin * ch < 100:
        cell = ConvLSTM(cin, ch, k)
        assert sum(v.size for v in cell.params.values()) == ConvLSTM.param_count(cin, ch, k)


def test_reduction_to_dense_lstm():
    rng = make_rng(11)
    cin, ch = 5, 4
    conv = random_conv_params(rng, cin, ch, 1)
    dense = {k: (v.reshape(v.shape[0], -1) if v.ndim == 4 else v) for k, v in conv.items()}
    h, c = rng.standard_normal(ch), rng.standard_normal(ch)
    for _ in range(20):
        x = rng.standard_normal(cin)
        a = convlstm_step(x[:, None, None], CellState(h[:, None, None], c[:, None, None]), conv)
        b = lstm_step(x, CellState(h, c), dense)
        assert np.linalg.norm(a.h.ravel() - b.h) <= 1e-12 * np.linalg.norm(b.h)
        assert np.linalg.norm(a.c.ravel() - b.c) <= 1e-12 * np.linalg.norm(b.c)
        h, c = b.h, b.c
