import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drqn_cover.errors import ChecksumMismatchError, ShapeMismatchError, ToleranceExceeded
from drqn_cover.nn import LSTM, Adam, BatchNorm2d, Conv2d, Linear, Param, conv_output_size, gradient_check, lstm_step, mse_loss
from drqn_cover.nn import checkpoint

TOL = 1e-4


class LstmUnroll:
    """Presents a multi-step LSTM rollout from a fixed initial state as a layer."""

    def __init__(self, lstm, h0, c0):
        self.lstm, self.state = lstm, (h0, c0)

    def parameters(self):
        return self.lstm.parameters()

    def forward(self, xs):
        return self.lstm.forward(xs, self.state)[0]

    def backward(self, dhs):
        return self.lstm.backward(dhs)[0]


# -- conv2d -------------------------------------------------------------------

def test_conv_identity_kernel_crops_center():
    conv = Conv2d(1, 1, kernel=5)
    conv.weight.value[...] = 0
    conv.weight.value[0, 0, 2, 2] = 1
    conv.bias.value[...] = 0
    x = np.random.default_rng(0).standard_normal((2, 1, 9, 7))
    assert np.allclose(conv.forward(x), x[:, :, 2:-2, 2:-2])


def test_conv_zero_input_gives_bias():
    conv = Conv2d(4, 16, kernel=5, rng=np.random.default_rng(1))
    out = conv.forward(np.zeros((1, 4, 16, 16)))
    assert out.shape == (1, 16, 12, 12)
    assert np.allclose(out, conv.bias.value[None, :, None, None])


def test_conv_rejects_bad_shapes():
    conv = Conv2d(4, 16, kernel=5)
    with pytest.raises(ShapeMismatchError):
        conv.forward(np.zeros((1, 3, 16, 16)))
    with pytest.raises(ShapeMismatchError):
        conv.forward(np.zeros((1, 4, 4, 4)))


def test_conv_matches_direct_loops():
    rng = np.random.default_rng(2)
    conv = Conv2d(2, 3, kernel=3, stride=2, rng=rng)
    x = rng.standard_normal((2, 2, 7, 8))
    out = conv.forward(x)
    w, b = conv.weight.value, conv.bias.value
    expected = np.zeros_like(out)
    for n in range(2):
        for o in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = x[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    expected[n, o, i, j] = (patch * w[o]).sum() + b[o]
    assert np.allclose(out, expected)


@pytest.mark.parametrize("seed", range(3))
def test_conv_gradient(seed):
    rng = np.random.default_rng(seed)
    conv = Conv2d(4, 16, kernel=5, rng=rng)
    gradient_check(conv, rng.standard_normal((1, 4, 16, 16)), tol=TOL, rng=rng)


@pytest.mark.parametrize("stride, padding", [(2, 0), (1, 2), (2, 1)])
def test_conv_gradient_stride_padding(stride, padding):
    rng = np.random.default_rng(7)
    conv = Conv2d(2, 3, kernel=3, stride=stride, padding=padding, rng=rng)
    gradient_check(conv, rng.standard_normal((2, 2, 7, 6)), tol=TOL, rng=rng)


@given(st.integers(1, 40), st.integers(1, 7), st.integers(1, 3), st.integers(0, 3))
def test_conv_output_size_formula(size, kernel, stride, padding):
    if size + 2 * padding < kernel:
        return
    conv = Conv2d(1, 1, kernel=kernel, stride=stride, padding=padding, rng=np.random.default_rng(0))
    out = conv.forward(np.zeros((1, 1, size, size + 1)))
    assert out.shape[2] == conv_output_size(size, kernel, stride, padding) == (size + 2 * padding - kernel) // stride + 1
    assert out.shape[3] == conv_output_size(size + 1, kernel, stride, padding)


# -- batchnorm ----------------------------------------------------------------

def test_batchnorm_standardised_input_passes_through():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 3, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    bn = BatchNorm2d(3)
    assert np.allclose(bn.forward(x, training=True), x, atol=1e-4)


def test_batchnorm_zero_gamma_outputs_beta():
    bn = BatchNorm2d(3)
    bn.gamma.value[...] = 0
    bn.beta.value[...] = [1.0, -2.0, 0.5]
    out = bn.forward(np.random.default_rng(1).standard_normal((4, 3, 6, 6)), training=True)
    assert np.allclose(out, bn.beta.value[None, :, None, None])


def test_batchnorm_running_stats_and_eval():
    rng = np.random.default_rng(3)
    bn = BatchNorm2d(2, momentum=0.1)
    x = rng.standard_normal((4, 2, 3, 3)) * 2 + 5
    bn.forward(x, training=True)
    assert np.allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))
    out = bn.forward(x, training=False)
    expected = (x - bn.running_mean[None, :, None, None]) / np.sqrt(bn.running_var[None, :, None, None] + 1e-5)
    assert np.allclose(out, expected)


def test_batchnorm_single_sample_train_mode():
    bn = BatchNorm2d(2)
    out = bn.forward(np.random.default_rng(4).standard_normal((1, 2, 4, 4)), training=True)
    assert np.isfinite(out).all()


@pytest.mark.parametrize("training", [True, False])
@pytest.mark.parametrize("seed", range(3))
def test_batchnorm_gradient(training, seed):
    rng = np.random.default_rng(seed)
    bn = BatchNorm2d(4)
    bn.gamma.value[...] = rng.uniform(0.5, 1.5, 4)
    bn.beta.value[...] = rng.standard_normal(4)
    bn.running_mean[...] = rng.standard_normal(4)
    bn.running_var[...] = rng.uniform(0.5, 2, 4)
    bn.training = training
    gradient_check(bn, rng.standard_normal((3, 4, 5, 5)), tol=TOL, rng=rng)


# -- lstm ---------------------------------------------------------------------

def test_lstm_zero_weights_zero_output():
    lstm = LSTM(6, 8)
    for p in lstm.parameters().values():
        p.value[...] = 0
    hs, (h, c) = lstm.forward(np.random.default_rng(0).standard_normal((3, 2, 6)))
    assert np.all(hs == 0) and np.all(c == 0)


def test_lstm_saturated_forget_gate_keeps_cell():
    rng = np.random.default_rng(1)
    lstm = LSTM(5, 4, rng=rng)
    lstm.w_x.value[...] = 0
    lstm.w_h.value[...] = 0
    b = lstm.b.value
    b[:4] = -60.0  # input gate closed
    b[4:8] = 60.0  # forget gate open
    c0 = rng.standard_normal((2, 4))
    _, (_, c) = lstm.forward(rng.standard_normal((4, 2, 5)), (np.zeros((2, 4)), c0))
    assert np.allclose(c, c0, atol=1e-12)


def test_lstm_step_gate_equations():
    rng = np.random.default_rng(2)
    lstm = LSTM(3, 2, rng=rng)
    x = rng.standard_normal((1, 3))
    h0, c0 = rng.standard_normal((1, 2)), rng.standard_normal((1, 2))
    h, (_, c), _ = lstm_step(x, (h0, c0), (lstm.w_x.value, lstm.w_h.value, lstm.b.value))
    z = lstm.w_x.value @ x[0] + lstm.w_h.value @ h0[0] + lstm.b.value
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, g, o = sig(z[:2]), sig(z[2:4]), np.tanh(z[4:6]), sig(z[6:])
    assert np.allclose(c[0], f * c0[0] + i * g)
    assert np.allclose(h[0], o * np.tanh(f * c0[0] + i * g))


def test_lstm_forget_bias_initialised_to_one():
    lstm = LSTM(3, 5)
    assert np.all(lstm.b.value[5:10] == 1.0)


def test_lstm_rejects_wrong_input_size():
    with pytest.raises(ShapeMismatchError):
        LSTM(3, 4).forward(np.zeros((1, 1, 5)))


@pytest.mark.parametrize("seed", range(3))
def test_lstm_bptt_gradient(seed):
    rng = np.random.default_rng(seed)
    lstm = LSTM(10, 8, rng=rng)
    frag = LstmUnroll(lstm, rng.standard_normal((2, 8)) * 0.5, rng.standard_normal((2, 8)) * 0.5)
    gradient_check(frag, rng.standard_normal((3, 2, 10)), tol=TOL, rng=rng)


# -- linear -------------------------------------------------------------------

def test_linear_identity_and_bias():
    lin = Linear(4, 4)
    lin.weight.value[...] = np.eye(4)
    lin.bias.value[...] = 0
    x = np.arange(8.0).reshape(2, 4)
    assert np.array_equal(lin.forward(x), x)
    lin.bias.value[...] = [1, 2, 3, 4]
    assert np.array_equal(lin.forward(np.zeros((1, 4))), [[1, 2, 3, 4]])


@pytest.mark.parametrize("seed", range(3))
def test_linear_gradient(seed):
    rng = np.random.default_rng(seed)
    gradient_check(Linear(128, 4, rng=rng), rng.standard_normal((5, 128)), tol=TOL, rng=rng)


# -- loss / optimiser ---------------------------------------------------------

def test_mse_zero_when_equal():
    loss, grad = mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert loss == 0 and np.all(grad == 0)


def test_mse_unit_error():
    loss, _ = mse_loss(np.ones(7), np.zeros(7))
    assert loss == 1.0


def test_mse_weighted_matches_direct_formula():
    rng = np.random.default_rng(0)
    pred, target, w = rng.standard_normal(64), rng.standard_normal(64), rng.uniform(0, 1, 64)
    loss, grad = mse_loss(pred, target, w)
    direct = sum(wi * (p - t) ** 2 for p, t, wi in zip(pred, target, w)) / 64
    assert loss == pytest.approx(direct, rel=1e-12)
    assert np.allclose(grad, [2 * wi * (p - t) / 64 for p, t, wi in zip(pred, target, w)])


def test_mse_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_adam_zero_gradient_is_noop():
    p = Param(np.array([1.0, -2.0, 3.0]))
    opt = Adam([p])
    for _ in range(5):
        opt.step()
    assert np.array_equal(p.value, [1.0, -2.0, 3.0])
    assert opt.step_count == 5


def test_adam_first_step_closed_form():
    g = np.array([0.3, -1e-3, 2.5, -7.0])
    p = Param(np.zeros(4))
    p.grad[...] = g
    Adam([p], lr=0.001).step()
    assert np.allclose(p.value, -0.001 * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=0)


def test_adam_constant_gradient_unit_step():
    p = Param(np.zeros(3))
    opt = Adam([p], lr=0.01)
    for _ in range(2000):
        before = p.value.copy()
        p.grad[...] = [0.5, -3.0, 1e-2]
        opt.step()
    assert np.allclose(np.abs(p.value - before), 0.01, rtol=1e-3)
    assert np.isfinite(p.adam_m).all() and np.isfinite(p.adam_v).all()


def test_adam_minimises_quadratic():
    p = Param(np.array([5.0, -3.0]))
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        p.grad[...] = 2 * p.value
        opt.step()
    assert np.allclose(p.value, 0, atol=1e-2)


# -- gradient checker ---------------------------------------------------------

class BrokenLinear(Linear):
    def backward(self, dout):
        dx = super().backward(dout)
        self.bias.grad *= 1.5
        return dx


def test_gradient_check_flags_wrong_parameter():
    rng = np.random.default_rng(0)
    with pytest.raises(ToleranceExceeded, match="bias"):
        gradient_check(BrokenLinear(6, 3, rng=rng), rng.standard_normal((2, 6)), rng=rng)


def test_gradient_check_report():
    rng = np.random.default_rng(1)
    report = gradient_check(Linear(6, 3, rng=rng), rng.standard_normal((2, 6)), rng=rng)
    assert set(report.errors) == {"weight", "bias", "input0"}
    assert report.max_rel_error < TOL


# -- checkpoint ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    arrays = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    path = tmp_path / "x.cbqn"
    checkpoint.save(path, arrays, {"variant": "recurrent"})
    blob = path.read_bytes()
    assert blob[:4] == b"CBQN"
    loaded, meta = checkpoint.load(path)
    assert meta == {"variant": "recurrent"}
    assert list(loaded) == list(arrays)
    for k in arrays:
        assert np.array_equal(loaded[k], arrays[k])


def test_checkpoint_corruption_detected(tmp_path):
    blob = bytearray(checkpoint.dumps({"w": np.ones((2, 2))}))
    blob[-8] ^= 0xFF
    with pytest.raises(ChecksumMismatchError):
        checkpoint.loads(bytes(blob))
    with pytest.raises(ChecksumMismatchError):
        checkpoint.loads(b"NOPE" + bytes(blob[4:]))
