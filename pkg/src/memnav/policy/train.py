"""PPO training over curriculum stages, and scan collection with a trained policy."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from memnav.errors import ConfigError
from memnav.neural import checkpoint
from memnav.neural.optim import Adam
from memnav.policy.actor_critic import ActorCritic, act, observation
from memnav.policy.env import EnvConfig, VecNavEnv, WorldPool, make_pool
from memnav.policy.perception import Perception
from memnav.policy.ppo import PpoConfig, collect_rollout, ppo_update
from memnav.sensor import ScanDataset
from memnav.world import WorldSpec


@dataclass(frozen=True)
class CurriculumStage:
    """``poisson_radius`` is ``None`` (obstacle-free), a scalar, or a ``[lo, hi]`` range."""

    name: str
    poisson_radius: float | tuple[float, float] | None
    iterations: int
    n_worlds: int = 16
    obstacle_radius_range: tuple[float, float] | None = None

    def __post_init__(self):
        r = self.poisson_radius
        if isinstance(r, (list, tuple)):
            r = tuple(float(v) for v in r)
            if len(r) != 2 or not 0 < r[0] <= r[1]:
                raise ConfigError(f"stage {self.name!r}: bad radius range {r}")
            object.__setattr__(self, "poisson_radius", r)
        elif r is not None and not float(r) > 0:
            raise ConfigError(f"stage {self.name!r}: poisson_radius must be positive")
        if self.obstacle_radius_range is not None:
            object.__setattr__(self, "obstacle_radius_range",
                               tuple(float(v) for v in self.obstacle_radius_range))
        if self.iterations < 1 or self.n_worlds < 1:
            raise ConfigError(f"stage {self.name!r}: budgets must be positive")


def stage_pool(stage: CurriculumStage, template: WorldSpec, seed: int, trav_samples: int = 512) -> WorldPool:
    return make_pool(template, stage.poisson_radius, stage.n_worlds, seed, stage.name,
                     trav_samples, stage.obstacle_radius_range)


@dataclass
class TrainResult:
    model: ActorCritic
    metrics: list[dict] = field(default_factory=list)
    snapshots: list[tuple[int, dict]] = field(default_factory=list)
    checkpoint_paths: list[str] = field(default_factory=list)


def _mean(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


def _metric_line(stage: str, iteration: int, buf, stats: dict) -> dict:
    eps = buf.episodes
    return {
        "iteration": iteration,
        "stage": stage,
        "episodes": len(eps),
        "success_fraction": _mean([e["outcome"] == "success" for e in eps]),
        "mean_return": _mean([e["return"] for e in eps]),
        "mean_v_hor": _mean([e["mean_v_hor"] for e in eps]),
        "reward_per_step": float(buf.rewards.mean()),
        **stats,
    }


def train_ppo(perception: Perception, stages, ppo: PpoConfig, env_config: EnvConfig,
              world_spec: WorldSpec, seed: int, model: ActorCritic | None = None,
              metrics_path=None, checkpoint_dir=None, meta: dict | None = None,
              tag: str = "actor") -> TrainResult:
    """Run PPO through ``stages`` in order, one optimizer throughout.

    A snapshot is kept every ``ppo.checkpoint_interval`` iterations (counted
    across stages) and after the last one; with ``checkpoint_dir`` each
    snapshot is also written as a checkpoint file.
    """
    stages = list(stages)
    if not stages:
        raise ConfigError("need at least one curriculum stage")
    rng = np.random.default_rng([seed, 41])
    if model is None:
        model = ActorCritic(perception.n_l, ppo.hidden, env_config.limits, rng=np.random.default_rng([seed, 42]))
    elif model.n_latent != perception.n_l:
        raise ConfigError(f"actor expects latent width {model.n_latent}, perception gives {perception.n_l}")
    opt = Adam(model.named_parameters(), lr=ppo.lr, max_grad_norm=ppo.max_grad_norm)
    result = TrainResult(model)
    log = open(metrics_path, "a") if metrics_path else None
    if checkpoint_dir:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    total = sum(s.iterations for s in stages)
    it = 0
    try:
        for k, stage in enumerate(stages):
            pool = stage_pool(stage, world_spec, seed * 100 + k, env_config.trav_samples)
            env = VecNavEnv(ppo.workers, pool, env_config, seed=seed * 100 + k)
            front = perception.resize(ppo.workers)
            latent = None
            for _ in range(stage.iterations):
                buf, latent = collect_rollout(env, front, model, ppo.horizon, rng, latent)
                stats = ppo_update(model, buf, ppo, opt, rng)
                it += 1
                line = _metric_line(stage.name, it, buf, stats)
                result.metrics.append(line)
                if log:
                    log.write(json.dumps(line, sort_keys=True) + "\n")
                if it % ppo.checkpoint_interval == 0 or it == total:
                    state = {k2: v.copy() for k2, v in model.state_dict().items()}
                    result.snapshots.append((it, state))
                    if checkpoint_dir:
                        path = Path(checkpoint_dir) / f"{tag}_{it:04d}.ckpt"
                        checkpoint.save(path, state, actor_meta(model, stage=stage.name, iteration=it, **(meta or {})))
                        result.checkpoint_paths.append(str(path))
    finally:
        if log:
            log.close()
    return result


def actor_meta(model: ActorCritic, **extra) -> dict:
    return {"kind": "actor", "n_latent": model.n_latent, "hidden": model.hidden,
            "limits": [model.limits.accel, model.limits.yaw_rate], **extra}


def collect_dataset(model: ActorCritic, perception: Perception, pool: WorldPool, episodes: int,
                    env_config: EnvConfig, seed: int, horizon: int | None = None,
                    workers: int = 16, deterministic: bool = False) -> ScanDataset:
    """Fly the policy and keep each episode's scan sequence (collisions simply end it).

    Episodes are returned in completion order, ties broken by slot, so the
    dataset depends only on the seeds.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    horizon = horizon or env_config.max_steps
    cfg = replace(env_config, max_steps=horizon)
    n = min(workers, episodes)
    env = VecNavEnv(n, pool, cfg, seed=seed)
    front = perception.resize(n)
    rng = np.random.default_rng([seed, 43])
    current: list[list[np.ndarray]] = [[] for _ in range(n)]
    done_eps: list[np.ndarray] = []
    while len(done_eps) < episodes:
        for i in range(n):
            current[i].append(env.scans[i].copy())
        z = front.step(env.scans)
        action, _, _ = act(model, observation(z, env.features()), None if deterministic else rng,
                           deterministic=deterministic)
        res = env.step(action)
        ended = np.nonzero(res.terminated | res.truncated)[0]
        for i in ended:
            done_eps.append(np.array(current[i]))
            current[i] = []
        front.reset(ended)
    return ScanDataset(done_eps[:episodes], cfg.dt)
