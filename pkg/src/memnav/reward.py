"""Shaping and terminal rewards, varying-speed and fixed-speed modes."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from memnav.dynamics import wrap_angle
from memnav.errors import ConfigError, ContractError

PROGRESS_MIN = -0.2
PROGRESS_MAX = 0.0


@dataclass(frozen=True)
class RewardWeights:
    lambda_d: float = -0.001
    lambda_b: float = -0.001
    lambda_v: float = -0.002
    lambda_z: float = -0.002
    lambda_f: float = -0.0005
    lambda_a: float = -0.0005
    v_max: float = 4.5
    v_desire: float = 2.5
    mode: str = "varying"

    def __post_init__(self):
        for name in ("lambda_d", "lambda_b", "lambda_v", "lambda_z", "lambda_f", "lambda_a"):
            if getattr(self, name) > 0:
                raise ConfigError(f"{name} must be <= 0")
        if not self.v_max > 0:
            raise ConfigError("v_max must be positive")
        if self.mode not in ("varying", "fixed"):
            raise ConfigError(f"mode must be 'varying' or 'fixed', got {self.mode!r}")
        if self.mode == "fixed" and self.v_desire < 0:
            raise ConfigError("v_desire must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TerminalConstants:
    r_exceed: float = -2.0
    r_arrive: float = 10.0
    r_collision: float = -2.0
    d_min: float = 1.0
    trav_min: float = 3.0
    trav_max: float = 13.0


class EventKind(str, Enum):
    EXCEED = "exceed"
    ARRIVE = "arrive"
    COLLISION = "collision"
    PROGRESS = "progress"


@dataclass(frozen=True)
class StepEvent:
    kind: EventKind
    trav: float = 13.0


def progress_reward_arrays(x, actions, prev_actions, w: RewardWeights) -> np.ndarray:
    """Vectorised shaping reward; ``x`` is ``(..., 7)``, actions ``(..., 4)``.

    Only the acceleration part of the action enters the jerk term.
    """
    x = np.asarray(x, dtype=np.float64)
    d_hor, v_hor, beta, d_z, _, chi, yaw = np.moveaxis(x, -1, 0)
    jerk = np.linalg.norm(np.asarray(prev_actions)[..., :3] - np.asarray(actions)[..., :3], axis=-1)
    r = (w.lambda_d * d_hor
         + w.lambda_b * np.abs(wrap_angle(chi + yaw - beta))
         + w.lambda_z * np.abs(d_z)
         + w.lambda_f * np.abs(chi)
         + w.lambda_a * jerk)
    if w.mode == "varying":
        r = r + np.where(v_hor > w.v_max, w.lambda_v * v_hor, 0.0)
    else:
        r = r + w.lambda_v * np.abs(v_hor - w.v_desire)
    return np.clip(r, PROGRESS_MIN, PROGRESS_MAX)


def progress_reward(x, action, prev_action, w: RewardWeights) -> float:
    a = action.as_array() if hasattr(action, "as_array") else action
    pa = prev_action.as_array() if hasattr(prev_action, "as_array") else prev_action
    return float(progress_reward_arrays(x, a, pa, w))


def arrival_reward(trav: float, c: TerminalConstants = TerminalConstants()) -> float:
    if not c.trav_min <= trav <= c.trav_max:
        raise ContractError(f"trav {trav} outside [{c.trav_min}, {c.trav_max}]")
    return c.r_arrive / trav


def total_reward(event: StepEvent, x, action, prev_action, w: RewardWeights,
                 c: TerminalConstants = TerminalConstants()) -> tuple[float, bool]:
    kind = EventKind(event.kind)
    if kind is EventKind.EXCEED:
        return c.r_exceed, True
    if kind is EventKind.ARRIVE:
        return arrival_reward(event.trav, c), True
    if kind is EventKind.COLLISION:
        return c.r_collision, True
    return progress_reward(x, action, prev_action, w), False
