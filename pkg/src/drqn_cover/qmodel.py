"""Recurrent Q-network and its CNN-only baseline.

Both variants share the trunk conv -> batchnorm -> relu -> conv -> batchnorm
-> relu, flatten, and append the normalised budget.  The recurrent variant
feeds that vector to an LSTM; the baseline swaps the LSTM for a dense layer
with ReLU of the same width.  A linear head produces one Q-value per action.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import state_codec
from .errors import AllMaskedError, ShapeMismatchError, VariantMismatchError
from .grid_env import NUM_ACTIONS
from .nn import LSTM, BatchNorm2d, Conv2d, Linear, ReLU, conv_output_size, pack_params
from .nn import checkpoint

RECURRENT = "recurrent"
CNN = "cnn"
VARIANTS = (RECURRENT, CNN)


class LstmState(NamedTuple):
    hidden: np.ndarray
    cell: np.ndarray


class QNetwork:
    def __init__(self, variant=RECURRENT, grid_shape=(16, 16), kernel=5, conv_channels=16, hidden_size=128,
                 seed=None, dtype=np.float32):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        rng = np.random.default_rng(seed)
        self.variant = variant
        self.grid_shape = tuple(grid_shape)
        self.kernel, self.conv_channels, self.hidden_size = kernel, conv_channels, hidden_size
        self.dtype = np.dtype(dtype)

        h, w = self.grid_shape
        for _ in range(2):
            h, w = conv_output_size(h, kernel), conv_output_size(w, kernel)
        if h < 1 or w < 1:
            raise ShapeMismatchError(f"grid {grid_shape} too small for two valid {kernel}x{kernel} convolutions")
        self.trunk_shape = (conv_channels, h, w)
        self.feature_size = conv_channels * h * w + 1

        self.conv1 = Conv2d(len(state_codec.CHANNELS), conv_channels, kernel, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(conv_channels, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(conv_channels, conv_channels, kernel, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(conv_channels, dtype=dtype)
        self.relu2 = ReLU()
        if variant == RECURRENT:
            self.core = LSTM(self.feature_size, hidden_size, rng=rng, dtype=dtype)
        else:
            self.core = Linear(self.feature_size, hidden_size, rng=rng, dtype=dtype)
            self.core_relu = ReLU()
        self.head = Linear(hidden_size, NUM_ACTIONS, rng=rng, dtype=dtype)
        self.packed = pack_params(self.parameters().values())
        self.training = False
        self._cached_batch = None

    # -- parameter plumbing -------------------------------------------------

    def _modules(self):
        core = "lstm" if self.variant == RECURRENT else "fc"
        return {"conv1": self.conv1, "bn1": self.bn1, "conv2": self.conv2, "bn2": self.bn2,
                core: self.core, "head": self.head}

    def parameters(self):
        out = {}
        for prefix, mod in self._modules().items():
            for name, p in mod.parameters().items():
                out[f"{prefix}.{name}"] = p
        return out

    def buffers(self):
        out = {}
        for prefix, mod in (("bn1", self.bn1), ("bn2", self.bn2)):
            for name, arr in mod.buffers().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        arrays = {name: p.value.copy() for name, p in self.parameters().items()}
        arrays.update({name: arr.copy() for name, arr in self.buffers().items()})
        return arrays

    def load_state_dict(self, arrays):
        params, buffers = self.parameters(), self.buffers()
        if set(arrays) != set(params) | set(buffers):
            missing = (set(params) | set(buffers)) ^ set(arrays)
            raise ShapeMismatchError(f"state dict keys differ: {sorted(missing)}")
        for name, p in params.items():
            if arrays[name].shape != p.value.shape:
                raise ShapeMismatchError(f"{name}: {arrays[name].shape} vs {p.value.shape}")
            p.value[...] = arrays[name]
        for name, arr in buffers.items():
            arr[...] = arrays[name]

    def copy_from(self, other: "QNetwork"):
        self.load_state_dict(other.state_dict())

    def clone(self) -> "QNetwork":
        twin = QNetwork(self.variant, self.grid_shape, self.kernel, self.conv_channels, self.hidden_size,
                        seed=0, dtype=self.dtype)
        twin.copy_from(self)
        return twin

    def metadata(self) -> dict:
        return {
            "variant": self.variant,
            "grid_shape": list(self.grid_shape),
            "kernel": self.kernel,
            "conv_channels": self.conv_channels,
            "hidden_size": self.hidden_size,
            "channels": list(state_codec.CHANNELS),
        }

    def save(self, path, extra_metadata=None):
        meta = self.metadata()
        meta.update(extra_metadata or {})
        checkpoint.save(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path, variant=None, dtype=np.float32) -> "QNetwork":
        arrays, meta = checkpoint.load(path)
        if variant is not None and meta.get("variant") != variant:
            raise VariantMismatchError(f"checkpoint holds {meta.get('variant')!r}, requested {variant!r}")
        net = cls(meta["variant"], tuple(meta["grid_shape"]), meta["kernel"], meta["conv_channels"],
                  meta["hidden_size"], seed=0, dtype=dtype)
        net.load_state_dict(arrays)
        return net

    # -- forward / backward -------------------------------------------------

    def initial_state(self, batch=1) -> LstmState | None:
        if self.variant != RECURRENT:
            return None
        return LstmState(*self.core.zero_state(batch, self.dtype))

    def forward(self, states, budgets, hidden=None, training=None):
        """Q-values for a batch.

        ``states`` is (B, 4, H, W), ``budgets`` is (B,).  Returns ``(q, hidden')``;
        ``hidden'`` is None for the baseline.  A ``None`` hidden means zeros.
        """
        training = self.training if training is None else training
        states = np.asarray(states, dtype=self.dtype)
        budgets = np.asarray(budgets, dtype=self.dtype).reshape(-1)
        if states.ndim != 4 or states.shape[1:] != (len(state_codec.CHANNELS), *self.grid_shape):
            raise ShapeMismatchError(f"expected (B, 4, {self.grid_shape[0]}, {self.grid_shape[1]}), got {states.shape}")
        batch = states.shape[0]
        x = self.relu1.forward(self.bn1.forward(self.conv1.forward(states), training))
        x = self.relu2.forward(self.bn2.forward(self.conv2.forward(x), training))
        feats = np.concatenate([x.reshape(batch, -1), budgets[:, None]], axis=1)
        if self.variant == RECURRENT:
            hs, new_hidden = self.core.forward(feats[None], hidden)
            z = hs[0]
            new_hidden = LstmState(*new_hidden)
        else:
            z = self.core_relu.forward(self.core.forward(feats))
            new_hidden = None
        self._cached_batch = batch
        return self.head.forward(z), new_hidden

    def backward(self, dq, input_grad=True):
        """Backprop ``dq`` (B, 4) from the last forward; returns (dstates, dbudgets).

        With ``input_grad=False`` only parameter gradients are accumulated and
        ``dstates`` is None, which skips the costliest part of the first conv.
        """
        dz = self.head.backward(dq)
        if self.variant == RECURRENT:
            dfeats = self.core.backward(dz[None])[0][0]
        else:
            dfeats = self.core.backward(self.core_relu.backward(dz))
        batch = self._cached_batch
        dx = dfeats[:, :-1].reshape(batch, *self.trunk_shape)
        dbudget = dfeats[:, -1]
        dx = self.conv2.backward(self.bn2.backward(self.relu2.backward(dx)))
        dstates = self.conv1.backward(self.bn1.backward(self.relu1.backward(dx)), input_grad)
        return dstates, dbudget

    def zero_grad(self):
        self.packed.zero_grad()

    def q_values(self, tensor: state_codec.StateTensor, hidden=None):
        """Single-observation inference (batch-norm on running stats)."""
        q, hidden = self.forward(tensor.channels[None], [tensor.budget_scalar], hidden, training=False)
        return q[0], hidden


class _QFragment:
    """Adapter presenting a QNetwork as a gradient-checkable layer."""

    def __init__(self, net: QNetwork, training=True):
        self.net, self.training = net, training

    def parameters(self):
        return self.net.parameters()

    def forward(self, states, budgets):
        return self.net.forward(states, budgets, training=self.training)[0]

    def backward(self, dq):
        return self.net.backward(dq)


def as_fragment(net: QNetwork, training=True):
    return _QFragment(net, training)


def masked_argmax(q, mask) -> int:
    """Index of the largest unmasked Q-value; ties go to the lowest index."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise AllMaskedError("every action is masked")
    return int(np.argmax(np.where(mask, q, -np.inf)))


def masked_argmax_batch(q, mask):
    """Row-wise masked argmax; rows with no legal action return 0."""
    return np.argmax(np.where(mask, q, -np.inf), axis=1)
