"""From-scratch numerical layer kit used by the Q-networks."""

from .gradcheck import GradCheckReport, gradient_check
from .layers import LSTM, BatchNorm2d, Conv2d, Linear, Param, ReLU, conv_output_size, lstm_step, mse_loss, pack_params
from .optim import Adam

__all__ = [
    "Adam",
    "BatchNorm2d",
    "Conv2d",
    "GradCheckReport",
    "LSTM",
    "Linear",
    "Param",
    "ReLU",
    "conv_output_size",
    "gradient_check",
    "lstm_step",
    "mse_loss",
    "pack_params",
]
