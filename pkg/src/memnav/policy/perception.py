"""Frozen VAE + LSTM front end producing the policy's latent input."""
from __future__ import annotations

import numpy as np

from memnav.errors import ContractError
from memnav.latent import VaeConfig, VaeModel, encode
from memnav.memory import MemoryConfig, MemoryModel, MemoryState, step_memory


class Perception:
    """Streams scans through the encoder (means) and the LSTM, one state per env slot."""

    def __init__(self, vae: VaeModel, memory: MemoryModel, n_envs: int):
        if memory.n_e != vae.n_e:
            raise ContractError(f"memory expects n_e={memory.n_e}, VAE provides {vae.n_e}")
        self.vae = vae
        self.memory = memory
        self.state = MemoryState.zeros(n_envs, memory.config.n_l)

    @property
    def n_l(self) -> int:
        return self.memory.config.n_l

    def reset(self, mask) -> None:
        self.state.reset(mask)

    def step(self, scans: np.ndarray) -> np.ndarray:
        mu = encode(self.vae, scans)[0]
        return step_memory(self.memory, mu, self.state).copy()

    def peek(self, scans: np.ndarray, slots: np.ndarray) -> np.ndarray:
        """Latent for ``scans`` continuing ``slots``' states, without committing."""
        mu = encode(self.vae, scans)[0]
        tmp = MemoryState(self.state.h[slots].copy(), self.state.c[slots].copy())
        return step_memory(self.memory, mu, tmp).copy()

    def resize(self, n_envs: int) -> "Perception":
        return Perception(self.vae, self.memory, n_envs)


def random_perception(n_envs: int, seed: int, vae_config: VaeConfig = VaeConfig(),
                      memory_config: MemoryConfig = MemoryConfig()) -> Perception:
    """Randomly initialised (untrained) front end used by the first PPO stage."""
    vae = VaeModel(vae_config, np.random.default_rng([seed, 31]))
    mem = MemoryModel(vae, memory_config, np.random.default_rng([seed, 32]))
    return Perception(vae, mem, n_envs)
