"""PPO: rollouts against the vectorised env, GAE, clipped-surrogate updates."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from memnav import kernels
from memnav.errors import ConfigError, NonFiniteError
from memnav.neural import tensor as T
from memnav.neural.optim import Adam
from memnav.policy.actor_critic import ActorCritic, act, entropy_t, log_prob_t, observation
from memnav.policy.env import VecNavEnv
from memnav.policy.perception import Perception

ADV_EPS = 1e-8


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch_size: int = 512
    horizon: int = 128
    workers: int = 16
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    lr: float = 3e-4
    max_grad_norm: float = 0.5
    iterations: int = 600
    checkpoint_interval: int = 20
    hidden: int = 64

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if not self.clip > 0:
            raise ConfigError("clip must be positive")
        if min(self.epochs, self.minibatch_size, self.horizon, self.workers, self.iterations,
               self.checkpoint_interval, self.hidden) < 1:
            raise ConfigError("PPO counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RolloutBuffer:
    obs: np.ndarray          # (T, N, D)
    actions: np.ndarray      # (T, N, 4)
    log_probs: np.ndarray    # (T, N)
    values: np.ndarray       # (T, N)
    rewards: np.ndarray      # (T, N)
    terminated: np.ndarray   # (T, N) bool
    truncated: np.ndarray    # (T, N) bool
    next_values: np.ndarray  # (T, N) value of s_{t+1} (pre-reset for truncations)
    episodes: list[dict] = field(default_factory=list)

    @property
    def dones(self) -> np.ndarray:
        return self.terminated | self.truncated

    def __len__(self) -> int:
        return self.rewards.size


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float, normalize: bool = True):
    """Returns ``(advantages, returns)`` shaped like ``buffer.rewards``.

    Returns are built from the raw advantages; only the advantages are
    normalised.
    """
    adv = kernels.gae(buffer.rewards, buffer.values, buffer.next_values,
                      buffer.terminated, buffer.dones, gamma, lam)
    returns = adv + buffer.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + ADV_EPS)
    return adv, returns


def collect_rollout(env: VecNavEnv, perception: Perception, model: ActorCritic, horizon: int,
                    rng: np.random.Generator, latent: np.ndarray | None = None):
    """Step ``env`` for ``horizon`` steps. Returns ``(buffer, latent)`` where
    ``latent`` is the current per-slot ``z_t`` to continue from."""
    n = env.n
    if latent is None:
        latent = perception.step(env.scans)
    dim = model.obs_dim
    buf = RolloutBuffer(
        obs=np.zeros((horizon, n, dim)), actions=np.zeros((horizon, n, 4)),
        log_probs=np.zeros((horizon, n)), values=np.zeros((horizon, n)),
        rewards=np.zeros((horizon, n)), terminated=np.zeros((horizon, n), bool),
        truncated=np.zeros((horizon, n), bool), next_values=np.zeros((horizon, n)))
    for t in range(horizon):
        obs = observation(latent, env.features())
        action, logp, value = act(model, obs, rng)
        res = env.step(action)
        buf.obs[t], buf.actions[t], buf.log_probs[t], buf.values[t] = obs, action, logp, value
        buf.rewards[t], buf.terminated[t], buf.truncated[t] = res.rewards, res.terminated, res.truncated
        done = np.nonzero(res.terminated | res.truncated)[0]
        boot = np.zeros(n)
        if len(done):
            trunc = res.truncated[done]
            if trunc.any():
                slots = done[trunc]
                z_fin = perception.peek(res.final_scans[trunc], slots)
                _, _, v_fin = act(model, observation(z_fin, res.final_features[trunc]), deterministic=True)
                boot[slots] = v_fin
            perception.reset(done)
            buf.episodes.extend(res.episode_stats)
        latent = perception.step(env.scans)
        buf.next_values[t] = boot
    _, _, v_last = act(model, observation(latent, env.features()), deterministic=True)
    following = np.concatenate([buf.values[1:], v_last[None, :]], axis=0)
    # bootstrap slots already hold the pre-reset value for truncations
    buf.next_values = np.where(buf.truncated, buf.next_values,
                               np.where(buf.terminated, 0.0, following))
    return buf, latent


def ppo_loss(model: ActorCritic, obs, actions, old_log_probs, advantages, returns, config: PpoConfig):
    """Clipped surrogate + value MSE - entropy bonus; returns (loss, stats)."""
    logp, log_std, value = log_prob_t(model, obs, actions)
    ratio = T.exp(logp - old_log_probs)
    surr = T.minimum(ratio * advantages, T.clip(ratio, 1 - config.clip, 1 + config.clip) * advantages)
    policy_loss = -T.mean(surr)
    dv = value - returns
    value_loss = T.mean(dv * dv)
    entropy = entropy_t(log_std)
    loss = policy_loss + value_loss * config.value_coef - entropy * config.entropy_coef
    clip_frac = float(np.mean(np.abs(ratio.data - 1) > config.clip))
    return loss, {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(),
                  "entropy": entropy.item(), "clip_fraction": clip_frac}


def ppo_update(model: ActorCritic, buffer: RolloutBuffer, config: PpoConfig, optimizer: Adam,
               rng: np.random.Generator) -> dict:
    adv, returns = compute_gae(buffer, config.gamma, config.gae_lambda)
    obs = buffer.obs.reshape(-1, buffer.obs.shape[-1])
    actions = buffer.actions.reshape(-1, buffer.actions.shape[-1])
    old = buffer.log_probs.reshape(-1)
    adv, returns = adv.reshape(-1), returns.reshape(-1)
    n = len(old)
    stats = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            mb = order[start:start + config.minibatch_size]
            optimizer.zero_grad()
            try:
                loss, st = ppo_loss(model, obs[mb], actions[mb], old[mb], adv[mb], returns[mb], config)
            except NonFiniteError as exc:
                raise NonFiniteError(f"PPO loss diverged: {exc}; "
                                     f"|adv|max={np.abs(adv).max():.3g} "
                                     f"log_std={model.log_std.data.round(3).tolist()}") from exc
            loss.backward()
            optimizer.step()
            stats.append(st)
    return {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
