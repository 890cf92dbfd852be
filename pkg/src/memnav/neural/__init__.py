"""Minimal differentiable-computation kernel (numpy, reverse mode)."""
from memnav.neural.layers import (Conv1d, ConvTranspose1d, Linear, LSTMCell, Module, Parameter,
                                  gaussian_log_prob, mse, reparameterize)
from memnav.neural.optim import Adam, adam_step
from memnav.neural.tensor import Tensor, no_grad

__all__ = [
    "Adam", "Conv1d", "ConvTranspose1d", "LSTMCell", "Linear", "Module", "Parameter", "Tensor",
    "adam_step", "gaussian_log_prob", "mse", "no_grad", "reparameterize",
]
