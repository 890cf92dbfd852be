"""Parameterised layers built on :mod:`memnav.neural.tensor`."""
from __future__ import annotations

import hashlib
import math

import numpy as np

from memnav.neural import tensor as T
from memnav.neural.tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)


class Module:
    """Attribute-walking parameter container (parameters named by dotted path).

    Attributes whose name starts with ``_`` are not walked.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        if strict and set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for k, p in params.items():
            if k in state:
                arr = np.asarray(state[k], dtype=np.float64)
                if arr.shape != p.data.shape:
                    raise ValueError(f"{k}: shape {arr.shape} != {p.data.shape}")
                p.data = arr.copy()

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.state_dict().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        self.weight = Parameter(gain * _kaiming_uniform(rng, (n_in, n_out), n_in))
        self.bias = Parameter(np.zeros(n_out))

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, rng):
        self.stride, self.padding = stride, padding
        self.weight = Parameter(_kaiming_uniform(rng, (c_out, c_in, kernel), c_in * kernel))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, rng):
        self.stride, self.padding = stride, padding
        fan_in = c_in * kernel // max(stride, 1)
        self.weight = Parameter(_kaiming_uniform(rng, (c_in, c_out, kernel), fan_in))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x):
        return T.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding)


class LSTMCell(Module):
    """Single-layer LSTM cell; forget-gate bias starts at 1."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_in, self.n_hidden = n_in, n_hidden
        bound = 1.0 / math.sqrt(n_hidden)
        self.w_ih = Parameter(rng.uniform(-bound, bound, (n_in, 4 * n_hidden)))
        self.w_hh = Parameter(rng.uniform(-bound, bound, (n_hidden, 4 * n_hidden)))
        b = np.zeros(4 * n_hidden)
        b[n_hidden:2 * n_hidden] = 1.0
        self.bias = Parameter(b)

    def initial_state(self, batch: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.n_hidden))
        return Tensor(z), Tensor(z.copy())

    def __call__(self, x, state):
        h, c = state
        return T.lstm_cell(x, h, c, self.w_ih, self.w_hh, self.bias)


def mse(pred, target):
    d = T.sub(pred, target)
    return T.mean(T.mul(d, d))


def gaussian_log_prob(x, mean, log_std):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = T.div(T.sub(x, mean), T.exp(log_std))
    per = T.mul(z, z) * -0.5 - log_std - 0.5 * math.log(2 * math.pi)
    return T.tsum(per, axis=-1)


def reparameterize(mu, log_var, rng: np.random.Generator | None, floor: float = -10.0):
    """``mu + exp(0.5 log_var) * eps``; ``log_var`` is floored before use.

    With ``rng=None`` the mean is returned (inference convention).
    """
    mu, log_var = T.as_tensor(mu), T.as_tensor(log_var)
    if rng is None:
        return mu
    eps = rng.standard_normal(mu.shape)
    std = T.exp(T.maximum(log_var, floor) * 0.5)
    return mu + std * eps
