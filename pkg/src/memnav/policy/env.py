"""Vectorised navigation environment: one world + drone per worker slot."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from memnav.dynamics import DT, ActionLimits, clip_actions, featurize_arrays, step_arrays
from memnav.reward import RewardWeights, TerminalConstants, progress_reward_arrays
from memnav.sensor import CameraModel, NoiseParams, apply_noise_draws, noise_draws, render_batch
from memnav.world import (World, WorldSpec, _sample_start_goal, collision_mask, empty_world,
                          generate_world, traversability)

OUTCOMES = ("success", "collision", "exceed", "timeout")
RUNNING = ""


@dataclass(frozen=True)
class EnvConfig:
    camera: CameraModel = CameraModel()
    noise: NoiseParams = NoiseParams()
    weights: RewardWeights = RewardWeights()
    terminal: TerminalConstants = TerminalConstants()
    limits: ActionLimits = ActionLimits()
    dt: float = DT
    max_steps: int = 600
    min_separation: float = 12.0
    z_range: tuple[float, float] = (1.5, 4.5)
    trav_samples: int = 512


@dataclass
class WorldPool:
    """Pre-generated worlds with their traversability, sampled per episode."""

    worlds: list[World]
    travs: np.ndarray
    name: str = ""

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(len(self.worlds)))


def make_pool(template: WorldSpec, radii: Sequence[float] | tuple[float, float] | None, n_worlds: int,
              seed: int, name: str = "", trav_samples: int = 512,
              obstacle_radius_range: tuple[float, float] | None = None) -> WorldPool:
    """``radii=None`` builds obstacle-free worlds; a 2-tuple is a uniform range."""
    rng = np.random.default_rng([seed, 11])
    worlds, travs = [], []
    for i in range(n_worlds):
        if radii is None:
            w = empty_world(template.with_(seed=int(seed) * 1000 + i))
        else:
            lo, hi = (radii, radii) if np.isscalar(radii) else radii
            r = float(lo + (hi - lo) * rng.random())
            spec = template.with_(poisson_radius=r, seed=int(rng.integers(2**31)),
                                  **({"obstacle_radius_range": obstacle_radius_range}
                                     if obstacle_radius_range else {}))
            w = generate_world(spec)
        worlds.append(w)
        travs.append(traversability(w, trav_samples, rng_seed=int(seed) * 7919 + i).trav)
    return WorldPool(worlds, np.array(travs), name)


@dataclass
class StepResult:
    rewards: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    outcomes: list[str]
    final_scans: np.ndarray | None = None
    final_features: np.ndarray | None = None
    episode_stats: list[dict] = field(default_factory=list)


class VecNavEnv:
    """``n`` independent drones, each in its own world, stepped in lockstep.

    Done slots are reset immediately; :attr:`StepResult.final_scans` and
    ``final_features`` carry the pre-reset observation of those slots.
    """

    def __init__(self, n: int, pool: WorldPool, config: EnvConfig = EnvConfig(), seed: int = 0,
                 start_goal: Callable | None = None):
        self.n = n
        self.pool = pool
        self.config = config
        self.rng = np.random.default_rng([seed, 21])
        # one noise stream per slot keeps each slot independent of batch composition
        self.noise_rngs = [np.random.default_rng([seed, 22, i]) for i in range(n)]
        self._start_goal = start_goal
        self._lo = np.array([w.lo for w in pool.worlds])
        self._hi = np.array([w.hi for w in pool.worlds])
        r = config.camera.ray_count
        self.world_idx = np.zeros(n, dtype=np.int64)
        self.p = np.zeros((n, 3))
        self.v = np.zeros((n, 3))
        self.yaw = np.zeros(n)
        self.goal = np.zeros((n, 3))
        self.start = np.zeros((n, 3))
        self.prev_action = np.zeros((n, 4))
        self.t = np.zeros(n, dtype=np.int64)
        self.path_len = np.zeros(n)
        self.speed_sum = np.zeros(n)
        self.ep_return = np.zeros(n)
        self.scans = np.ones((n, r))
        for i in range(n):
            self._reset_slot(i)
        self.scans = self._observe(np.arange(n))

    # -- state ---------------------------------------------------------------
    def world(self, i: int) -> World:
        return self.pool.worlds[self.world_idx[i]]

    def trav(self, i: int) -> float:
        return float(self.pool.travs[self.world_idx[i]])

    def _reset_slot(self, i: int) -> None:
        self._place(i, self.pool.sample(self.rng), self.rng)

    def _place(self, i: int, world_index: int, rng: np.random.Generator) -> None:
        self.world_idx[i] = world_index
        w = self.world(i)
        if self._start_goal is not None:
            start, goal = self._start_goal(w, rng)
        else:
            start, goal = _sample_start_goal(w, self.config.min_separation, rng, self.config.z_range)
        self.p[i] = start
        self.start[i] = start
        self.goal[i] = goal
        self.v[i] = 0.0
        d = goal - start
        self.yaw[i] = np.arctan2(d[1], d[0]) + rng.uniform(-np.pi / 2, np.pi / 2)
        self.prev_action[i] = 0.0
        self.t[i] = 0
        self.path_len[i] = 0.0
        self.speed_sum[i] = 0.0
        self.ep_return[i] = 0.0

    def reset_to(self, i: int, world_index: int, seed: int) -> None:
        """Seeded placement of slot ``i``: start, goal, yaw and sensor noise depend only on
        ``(world_index, seed)``."""
        rng = np.random.default_rng([seed, 23, world_index])
        self._place(i, world_index, rng)
        self.noise_rngs[i] = np.random.default_rng([seed, 24, world_index])
        self.scans[i] = self._observe(np.array([i]))[0]

    def _bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self._lo[self.world_idx], self._hi[self.world_idx]

    def features(self) -> np.ndarray:
        return featurize_arrays(self.p, self.v, self.yaw, self.goal)

    def _observe(self, idx: np.ndarray) -> np.ndarray:
        r = self.config.camera.ray_count
        clean = np.empty((len(idx), r))
        eps = np.empty((len(idx), r))
        uni = np.empty((len(idx), r))
        for k, i in enumerate(idx):
            clean[k] = render_batch(self.world(i), self.p[i:i + 1], self.yaw[i:i + 1], self.config.camera)[0]
            eps[k], uni[k] = noise_draws(r, self.noise_rngs[i])
        return apply_noise_draws(clean, self.config.noise, eps, uni)

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        return self.scans, self.features()

    # -- dynamics ------------------------------------------------------------
    def step(self, actions: np.ndarray) -> StepResult:
        cfg = self.config
        a = clip_actions(np.asarray(actions, dtype=np.float64), cfg.limits)
        p_old = self.p.copy()
        self.p, self.v, self.yaw = step_arrays(self.p, self.v, self.yaw, a, cfg.dt)
        self.t += 1
        self.path_len += np.linalg.norm(self.p[:, :2] - p_old[:, :2], axis=1)
        self.speed_sum += np.hypot(self.v[:, 0], self.v[:, 1])
        x = self.features()
        rewards = progress_reward_arrays(x, a, self.prev_action, cfg.weights)
        self.prev_action = a
        outcomes = [RUNNING] * self.n
        dist = np.linalg.norm(self.goal - self.p, axis=1)
        lo, hi = self._bounds()
        exceed = np.any((self.p < lo) | (self.p > hi), axis=1)
        arrive = ~exceed & (dist < cfg.terminal.d_min)
        collide = np.zeros(self.n, dtype=bool)
        for i in np.nonzero(~exceed & ~arrive)[0]:
            w = self.world(i)
            collide[i] = collision_mask(w, self.p[i:i + 1], w.spec.drone_radius)[0]
        timeout = ~(exceed | arrive | collide) & (self.t >= cfg.max_steps)
        rewards[exceed] = cfg.terminal.r_exceed
        rewards[arrive] = cfg.terminal.r_arrive / self.pool.travs[self.world_idx[arrive]]
        rewards[collide] = cfg.terminal.r_collision
        terminated = exceed | arrive | collide
        truncated = timeout
        for mask, tag in ((exceed, "exceed"), (arrive, "success"), (collide, "collision"), (timeout, "timeout")):
            for i in np.nonzero(mask)[0]:
                outcomes[i] = tag
        self.ep_return += rewards
        done = np.nonzero(terminated | truncated)[0]
        result = StepResult(rewards, terminated, truncated, outcomes)
        if len(done):
            result.final_features = x[done].copy()
            result.final_scans = self._observe(done)
            for i in done:
                result.episode_stats.append(self._episode_stats(i, outcomes[i]))
                self._reset_slot(i)
        self.scans = self._observe(np.arange(self.n))
        return result

    def _episode_stats(self, i: int, outcome: str) -> dict:
        t = int(self.t[i])
        return {
            "slot": int(i), "outcome": outcome, "steps": t,
            "flight_time": t * self.config.dt,
            "path_length": float(self.path_len[i]),
            "straight_distance": float(np.linalg.norm(self.goal[i, :2] - self.start[i, :2])),
            "mean_v_hor": float(self.speed_sum[i] / max(t, 1)),
            "trav": self.trav(i), "world_index": int(self.world_idx[i]),
            "return": float(self.ep_return[i]),
        }
