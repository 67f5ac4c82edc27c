"""Dense layers with hand-written backward passes.

Every layer follows the same small protocol:

* ``forward(x)`` computes the output and caches what backward needs,
* ``backward(dout)`` returns the gradient w.r.t. the input and *accumulates*
  parameter gradients into ``Param.grad``,
* ``parameters()`` returns an ordered ``{name: Param}`` dict.

Arrays are batch-first.  Images are ``(batch, channels, height, width)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError


class Param:
    """A learnable tensor with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "adam_m", "adam_v")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.adam_m = np.zeros_like(value)
        self.adam_v = np.zeros_like(value)

    def zero_grad(self):
        self.grad.fill(0)

    @property
    def shape(self):
        return self.value.shape


def pack_params(params) -> Param:
    """Re-home ``params`` as views into one flat buffer and return that buffer as a Param.

    Adam over the returned pack touches every parameter with a handful of
    vectorised operations instead of a loop over small arrays.
    """
    params = list(params)
    dtype = np.result_type(*[p.value.dtype for p in params])
    total = sum(p.value.size for p in params)
    pack = Param(np.zeros(total, dtype=dtype))
    offset = 0
    for p in params:
        n = p.value.size
        for attr in ("value", "grad", "adam_m", "adam_v"):
            flat = getattr(pack, attr)[offset:offset + n]
            flat[...] = getattr(p, attr).reshape(-1)
            setattr(p, attr, flat.reshape(p.value.shape))
        offset += n
    return pack


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


class Conv2d:
    def __init__(self, in_channels, out_channels, kernel=5, stride=1, padding=0, rng=None, dtype=np.float64):
        rng = np.random.default_rng() if rng is None else rng
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_channels * kernel * kernel
        self.weight = Param(_uniform(rng, fan_in, (out_channels, in_channels, kernel, kernel), dtype))
        self.bias = Param(_uniform(rng, fan_in, (out_channels,), dtype))
        self._cache = None

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, height, width):
        k, s, p = self.kernel, self.stride, self.padding
        return conv_output_size(height, k, s, p), conv_output_size(width, k, s, p)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(f"conv expects (B, {self.in_channels}, H, W), got {x.shape}")
        k, s, p = self.kernel, self.stride, self.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        b, c, h, w = x.shape
        if h < k or w < k:
            raise ShapeMismatchError(f"input {h}x{w} smaller than kernel {k}")
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
        wmat = self.weight.value.reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.bias.value
        self._cache = (cols, x.shape, ho, wo)
        return out.reshape(b, ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dout, input_grad=True):
        """Accumulate parameter gradients; return dL/dx unless ``input_grad`` is False."""
        cols, xshape, ho, wo = self._cache
        b, c, h, w = xshape
        k, s, p = self.kernel, self.stride, self.padding
        d = dout.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self.weight.grad += (d.T @ cols).reshape(self.weight.shape)
        self.bias.grad += d.sum(axis=0)
        if not input_grad:
            return None
        dcols = (d @ self.weight.value.reshape(self.out_channels, -1)).reshape(b, ho, wo, c, k, k)
        dx = np.zeros(xshape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return dx


class BatchNorm2d:
    """Per-channel batch normalisation.

    ``training=True`` normalises with batch statistics and updates running
    statistics; ``training=False`` uses the running statistics.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float64):
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.training = True
        self._cache = None

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=None):
        training = self.training if training is None else training
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatchError(f"batchnorm expects (B, {self.channels}, H, W), got {x.shape}")
        g = self.gamma.value[None, :, None, None]
        if training:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            centered = x - mean[None, :, None, None]
            var = (centered * centered).mean(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = centered * inv_std[None, :, None, None]
            m = self.momentum
            unbiased = var * count / (count - 1) if count > 1 else var
            self.running_mean *= 1 - m
            self.running_mean += m * mean
            self.running_var *= 1 - m
            self.running_var += m * unbiased
            self._cache = (True, xhat, inv_std, count)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
            self._cache = (False, xhat, inv_std, None)
        return g * xhat + self.beta.value[None, :, None, None]

    def backward(self, dout):
        training, xhat, inv_std, count = self._cache
        self.gamma.grad += (dout * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.gamma.value[None, :, None, None]
        if not training:
            return dxhat * inv_std[None, :, None, None]
        sum_d = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return inv_std[None, :, None, None] / count * (count * dxhat - sum_d - xhat * sum_dx)


class ReLU:
    def __init__(self):
        self._mask = None

    def parameters(self):
        return {}

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Linear:
    def __init__(self, in_features, out_features, rng=None, dtype=np.float64):
        rng = np.random.default_rng() if rng is None else rng
        self.in_features, self.out_features = in_features, out_features
        self.weight = Param(_uniform(rng, in_features, (out_features, in_features), dtype))
        self.bias = Param(_uniform(rng, in_features, (out_features,), dtype))
        self._x = None

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeMismatchError(f"linear expects last dim {self.in_features}, got {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dout):
        x = self._x.reshape(-1, self.in_features)
        d = dout.reshape(-1, self.out_features)
        self.weight.grad += d.T @ x
        self.bias.grad += d.sum(axis=0)
        return dout @ self.weight.value


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_step(x, state, params):
    """One LSTM time step.

    ``params`` is ``(w_x, w_h, b)`` with gate blocks stacked in the order
    input, forget, candidate, output.  ``state`` is ``(h, c)``.  Returns
    ``(h_new, (h_new, c_new), cache)``.
    """
    w_x, w_h, b = params
    h, c = state
    if x.shape[-1] != w_x.shape[1]:
        raise ShapeMismatchError(f"lstm expects input dim {w_x.shape[1]}, got {x.shape[-1]}")
    hidden = w_h.shape[1]
    z = x @ w_x.T + h @ w_h.T + b
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _sigmoid(z[:, 3 * hidden:])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    cache = (x, h, c, i, f, g, o, tanh_c)
    return h_new, (h_new, c_new), cache


def lstm_step_backward(dh, dc, cache, params, grads):
    """Backward through one step; accumulates into ``grads`` = (dw_x, dw_h, db).

    Returns ``(dx, dh_prev, dc_prev)``.
    """
    w_x, w_h, _ = params
    x, h, c, i, f, g, o, tanh_c = cache
    do = dh * tanh_c
    dc = dc + dh * o * (1 - tanh_c * tanh_c)
    di, df, dg = dc * g, dc * c, dc * i
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
    )
    dw_x, dw_h, db = grads
    dw_x += dz.T @ x
    dw_h += dz.T @ h
    db += dz.sum(axis=0)
    return dz @ w_x, dz @ w_h, dc * f


class LSTM:
    """LSTM layer over a ``(time, batch, features)`` sequence with full BPTT."""

    def __init__(self, input_size, hidden_size=128, rng=None, dtype=np.float64, forget_bias=1.0):
        rng = np.random.default_rng() if rng is None else rng
        self.input_size, self.hidden_size = input_size, hidden_size
        h = hidden_size
        self.w_x = Param(_uniform(rng, h, (4 * h, input_size), dtype))
        self.w_h = Param(_uniform(rng, h, (4 * h, h), dtype))
        bias = _uniform(rng, h, (4 * h,), dtype)
        bias[h:2 * h] = forget_bias
        self.b = Param(bias)
        self._caches = None

    def parameters(self):
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    def zero_state(self, batch, dtype=None):
        dtype = self.w_x.value.dtype if dtype is None else dtype
        z = np.zeros((batch, self.hidden_size), dtype=dtype)
        return z, z.copy()

    def forward(self, xs, state=None):
        """Run the sequence; returns ``(hs, final_state)`` with hs shaped (T, B, H)."""
        if xs.ndim != 3:
            raise ShapeMismatchError(f"lstm expects (T, B, F), got {xs.shape}")
        state = self.zero_state(xs.shape[1], xs.dtype) if state is None else state
        params = (self.w_x.value, self.w_h.value, self.b.value)
        hs, caches = [], []
        for x in xs:
            h, state, cache = lstm_step(x, state, params)
            hs.append(h)
            caches.append(cache)
        self._caches = caches
        return np.stack(hs), state

    def backward(self, dhs, dstate=None):
        """BPTT; ``dhs`` is (T, B, H).  Returns ``(dxs, (dh0, dc0))``."""
        params = (self.w_x.value, self.w_h.value, self.b.value)
        grads = (self.w_x.grad, self.w_h.grad, self.b.grad)
        if dstate is None:
            dh_next = np.zeros_like(dhs[0])
            dc_next = np.zeros_like(dhs[0])
        else:
            dh_next, dc_next = dstate
        dxs = []
        for t in reversed(range(len(self._caches))):
            dx, dh_next, dc_next = lstm_step_backward(dhs[t] + dh_next, dc_next, self._caches[t], params, grads)
            dxs.append(dx)
        return np.stack(dxs[::-1]), (dh_next, dc_next)


def mse_loss(pred, target, weights=None):
    """Importance-weighted mean squared error.

    Returns ``(loss, dloss/dpred)``; the mean runs over every element of ``pred``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs target {target.shape}")
    w = np.ones_like(pred) if weights is None else np.asarray(weights, dtype=pred.dtype)
    if w.shape != pred.shape:
        raise ShapeMismatchError(f"weights {w.shape} vs pred {pred.shape}")
    diff = pred - target
    n = max(pred.size, 1)
    loss = float((w * diff * diff).sum() / n)
    return loss, 2.0 * w * diff / n
