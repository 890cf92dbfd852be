"""Convolutional VAE over 1-D depth scans."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass

import numpy as np

from memnav.errors import ConfigError
from memnav.neural import tensor as T
from memnav.neural.layers import Conv1d, ConvTranspose1d, Linear, Module, mse, reparameterize
from memnav.neural.optim import Adam
from memnav.neural.tensor import Tensor, no_grad

N_CONV = 6
LOGVAR_FLOOR = -10.0


@dataclass(frozen=True)
class VaeConfig:
    n_e: int = 64
    beta_norm: float = 1e-4
    lr: float = 2e-3
    batch_size: int = 64
    epochs: int = 60
    ray_count: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 32, 64, 64)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.n_e < 1:
            raise ConfigError("n_e must be >= 1")
        if self.beta_norm < 0:
            raise ConfigError("beta_norm must be >= 0")
        if len(self.channels) != N_CONV:
            raise ConfigError(f"need {N_CONV} channel widths")
        if self.ray_count % (2 ** N_CONV):
            raise ConfigError(f"ray_count must be a multiple of {2 ** N_CONV}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ConfigError("bad VAE training settings")


class VaeModel(Module):
    """Six stride-2 convs + two affine heads; mirrored decoder with a sigmoid output."""

    def __init__(self, config: VaeConfig = VaeConfig(), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        ch = (1,) + config.channels
        self.base_len = config.ray_count // 2 ** N_CONV
        flat = ch[-1] * self.base_len
        self.enc = [Conv1d(ch[i], ch[i + 1], 4, 2, 1, rng) for i in range(N_CONV)]
        self.fc_mu = Linear(flat, config.n_e, rng)
        self.fc_logvar = Linear(flat, config.n_e, rng, gain=0.1)
        self.fc_dec = Linear(config.n_e, flat, rng)
        rev = ch[::-1]
        self.dec = [ConvTranspose1d(rev[i], rev[i + 1], 4, 2, 1, rng) for i in range(N_CONV)]

    @property
    def n_e(self) -> int:
        return self.config.n_e

    def encode_t(self, x) -> tuple[Tensor, Tensor]:
        """``x``: (B, R) -> (mu, log_var), each (B, n_e)."""
        x = T.as_tensor(x)
        h = x.reshape(x.shape[0], 1, x.shape[1])
        for layer in self.enc:
            h = T.relu(layer(h))
        h = h.reshape(h.shape[0], -1)
        return self.fc_mu(h), T.maximum(self.fc_logvar(h), LOGVAR_FLOOR)

    def decode_t(self, z) -> Tensor:
        """``z``: (B, n_e) -> reconstruction (B, R) in (0, 1)."""
        z = T.as_tensor(z)
        h = T.relu(self.fc_dec(z)).reshape(z.shape[0], self.config.channels[-1], self.base_len)
        for i, layer in enumerate(self.dec):
            h = layer(h)
            if i < N_CONV - 1:
                h = T.relu(h)
        return T.sigmoid(h).reshape(z.shape[0], -1)

    def frozen(self) -> "VaeModel":
        """Deep copy whose parameters take no gradient."""
        twin = copy.deepcopy(self)
        for p in twin.parameters():
            p.requires_grad = False
            p.grad = None
        return twin


def _as_batch(scans) -> np.ndarray:
    if hasattr(scans, "values"):
        scans = scans.values
    arr = np.asarray(scans, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def encode(model: VaeModel, scans, rng: np.random.Generator | None = None):
    """Returns numpy ``(mu, log_var, z)``. ``rng=None`` is inference: ``z = mu``."""
    x = _as_batch(scans)
    with no_grad():
        mu, lv = model.encode_t(x)
        z = reparameterize(mu, lv, rng, LOGVAR_FLOOR)
    squeeze = np.ndim(scans.values if hasattr(scans, "values") else scans) == 1
    out = (mu.data, lv.data, z.data)
    return tuple(o[0] for o in out) if squeeze else out


def decode(model: VaeModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    with no_grad():
        out = model.decode_t(z[None, :] if z.ndim == 1 else z).data
    return out[0] if z.ndim == 1 else out


def kl_divergence(mu, log_var) -> Tensor:
    """Batch mean of 0.5 * sum(mu^2 + var - 1 - log var) (non-negative KL to N(0, I))."""
    mu, log_var = T.as_tensor(mu), T.as_tensor(log_var)
    per = T.mul(mu, mu) + T.exp(log_var) - 1.0 - log_var
    return T.mean(T.tsum(per, axis=-1)) * 0.5


def vae_loss(model: VaeModel, batch, rng: np.random.Generator | None = None, beta_norm=None):
    """Returns ``(total, recon, kl)`` tensors for a (B, R) batch."""
    x = _as_batch(batch)
    if x.shape[0] == 0:
        raise ConfigError("empty batch")
    beta = model.config.beta_norm if beta_norm is None else beta_norm
    mu, lv = model.encode_t(x)
    z = reparameterize(mu, lv, rng, LOGVAR_FLOOR)
    recon = mse(model.decode_t(z), x)
    kl = kl_divergence(mu, lv)
    return recon + kl * beta, recon, kl


def reconstruction_mse(model: VaeModel, scans) -> float:
    """Inference-mode (z = mu) reconstruction MSE."""
    x = _as_batch(scans)
    with no_grad():
        mu, _ = model.encode_t(x)
        return float(np.mean((model.decode_t(mu).data - x) ** 2))


def train_vae(frames, config: VaeConfig = VaeConfig(), model: VaeModel | None = None,
              log_path=None) -> tuple[VaeModel, list[dict]]:
    """Minibatch Adam on the VAE loss; one curve entry per epoch."""
    if hasattr(frames, "frames"):
        frames = frames.frames()
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ConfigError("train_vae needs a non-empty (N, ray_count) array")
    if x.shape[1] != config.ray_count:
        raise ConfigError(f"scan width {x.shape[1]} != ray_count {config.ray_count}")
    rng = np.random.default_rng([config.seed, 1])
    model = model or VaeModel(config)
    opt = Adam(model.named_parameters(), lr=config.lr)
    curve = []
    log = open(log_path, "a") if log_path else None
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(x))
            sums = np.zeros(3)
            n_batches = 0
            for start in range(0, len(x), config.batch_size):
                batch = x[order[start:start + config.batch_size]]
                opt.zero_grad()
                total, recon, kl = vae_loss(model, batch, rng)
                total.backward()
                opt.step()
                sums += (total.item(), recon.item(), kl.item())
                n_batches += 1
            row = {"epoch": epoch, "recon": float(sums[1] / n_batches),
                   "kl": float(sums[2] / n_batches), "total": float(sums[0] / n_batches)}
            curve.append(row)
            if log:
                log.write(json.dumps(row) + "\n")
    finally:
        if log:
            log.close()
    return model, curve


def vae_config_dict(config: VaeConfig) -> dict:
    d = asdict(config)
    d["channels"] = list(config.channels)
    return d
