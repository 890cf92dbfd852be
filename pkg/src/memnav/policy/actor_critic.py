"""Gaussian actor-critic over ``[z_t || x_t]``."""
from __future__ import annotations

import math

import numpy as np

from memnav.dynamics import N_STATE_FEATURES, ActionLimits
from memnav.errors import ShapeError
from memnav.neural import tensor as T
from memnav.neural.layers import Linear, Module, Parameter, gaussian_log_prob
from memnav.neural.tensor import Tensor, no_grad

ACTION_DIM = 4
# fixed input scaling for the non-angular state features (d_hor, v_hor, d_z, v_z)
_FEATURE_SCALE = np.array([3.0, 5.0, 3.0, 2.0])
ENCODED_STATE_DIM = 4 + 8


def encode_state(x: np.ndarray) -> np.ndarray:
    """Scaled magnitudes plus sin/cos of the angles and of the heading error.

    ``x`` is ``(..., 7)`` = (d_hor, v_hor, beta', d_z, v_z, chi', yaw).
    """
    beta, chi, yaw = x[..., 2], x[..., 5], x[..., 6]
    rel = beta - yaw
    mags = np.stack([x[..., 0], x[..., 1], x[..., 3], x[..., 4]], axis=-1) / _FEATURE_SCALE
    trig = np.stack([np.sin(beta), np.cos(beta), np.sin(chi), np.cos(chi),
                     np.sin(yaw), np.cos(yaw), np.sin(rel), np.cos(rel)], axis=-1)
    return np.concatenate([mags, trig], axis=-1)


class ActorCritic(Module):
    def __init__(self, n_latent: int, hidden: int = 64, limits: ActionLimits = ActionLimits(),
                 init_std_fraction: float = 0.25, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_latent = n_latent
        self.hidden = hidden
        self.limits = limits
        self._lim = limits.as_array()
        n_in = n_latent + ENCODED_STATE_DIM
        self.fc1 = Linear(n_in, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.mu = Linear(hidden, ACTION_DIM, rng, gain=0.01)
        self.value = Linear(hidden, 1, rng)
        self.log_std = Parameter(np.log(init_std_fraction * self._lim))

    @property
    def obs_dim(self) -> int:
        return self.n_latent + N_STATE_FEATURES

    def prepare(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise ShapeError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        return np.concatenate([obs[..., : self.n_latent], encode_state(obs[..., self.n_latent:])], axis=-1)

    def forward_t(self, obs) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (action mean, log_std, value) tensors for a batch of observations."""
        h = T.tanh(self.fc1(self.prepare(obs)))
        h = T.tanh(self.fc2(h))
        mean = T.tanh(self.mu(h)) * self._lim
        value = self.value(h).reshape(-1)
        return mean, self.log_std, value


def observation(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """The policy input ``[z_t || x_t]``."""
    return np.concatenate([z, x], axis=-1)


def act(model: ActorCritic, obs, rng: np.random.Generator | None = None, deterministic: bool = False):
    """Sample (or take the mean of) the Gaussian policy.

    Returns numpy ``(action, log_prob, value)``; the action is the raw Gaussian
    sample, the environment applies the limits.
    """
    obs = np.atleast_2d(obs)
    with no_grad():
        mean, log_std, value = model.forward_t(obs)
    mean, log_std = mean.data, log_std.data
    if deterministic or rng is None:
        action = mean.copy()
    else:
        action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    z = (action - mean) / np.exp(log_std)
    logp = np.sum(-0.5 * z * z - log_std - 0.5 * math.log(2 * math.pi), axis=-1)
    return action, logp, value.data.copy()


def log_prob_t(model: ActorCritic, obs, actions):
    mean, log_std, value = model.forward_t(obs)
    return gaussian_log_prob(actions, mean, log_std), log_std, value


def entropy_t(log_std: Tensor) -> Tensor:
    return T.tsum(log_std + 0.5 * math.log(2 * math.pi * math.e))
