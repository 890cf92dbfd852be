"""Point-mass kinematics with body-frame velocity, and the 7-value state feature."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

DT = 0.1
N_STATE_FEATURES = 7
FEATURE_NAMES = ("d_hor", "v_hor", "beta_w", "d_z", "v_z", "chi_b", "yaw")


def wrap_angle(theta):
    """Wrap to ``(-pi, pi]``; works on scalars and arrays."""
    t = np.asarray(theta, dtype=np.float64)
    out = t - 2.0 * np.pi * np.ceil((t - np.pi) / (2.0 * np.pi))
    return float(out) if out.ndim == 0 else out


def body_to_world(yaw, v):
    """Rotate body-frame vectors about +z by ``yaw``. Broadcasts over leading axes."""
    yaw = np.asarray(yaw, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    out = np.empty(np.broadcast_shapes(v.shape, yaw.shape + (3,)))
    out[..., 0] = c * v[..., 0] - s * v[..., 1]
    out[..., 1] = s * v[..., 0] + c * v[..., 1]
    out[..., 2] = v[..., 2]
    return out


@dataclass(frozen=True)
class ActionLimits:
    accel: float = 3.0
    yaw_rate: float = 1.5

    def as_array(self) -> np.ndarray:
        return np.array([self.accel, self.accel, self.accel, self.yaw_rate])


@dataclass(frozen=True)
class DroneState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.float64).copy())
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).copy())
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(frozen=True)
class Action:
    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64).copy())
        object.__setattr__(self, "yaw_rate", float(self.yaw_rate))

    def as_array(self) -> np.ndarray:
        return np.append(self.a, self.yaw_rate)

    @classmethod
    def from_array(cls, arr) -> "Action":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[:3], float(arr[3]))

    def clipped(self, limits: ActionLimits = ActionLimits()) -> "Action":
        return Action.from_array(clip_actions(self.as_array(), limits))


def clip_actions(actions: np.ndarray, limits: ActionLimits = ActionLimits()) -> np.ndarray:
    lim = limits.as_array()
    return np.clip(actions, -lim, lim)


def step_arrays(p, v, yaw, actions, dt: float = DT):
    """Batched semi-implicit Euler. ``actions`` is ``(..., 4)`` = (a_xyz, yaw_rate)."""
    v_new = v + actions[..., :3] * dt
    yaw_new = wrap_angle(yaw + actions[..., 3] * dt)
    p_new = p + body_to_world(yaw_new, v_new) * dt
    return p_new, v_new, yaw_new


def step(state: DroneState, action: Action, dt: float = DT) -> DroneState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    p, v, yaw = step_arrays(state.p, state.v, np.float64(state.yaw), action.as_array(), dt)
    return DroneState(p, v, float(yaw))


def featurize_arrays(p, v, yaw, goal) -> np.ndarray:
    """Batched feature vector; returns ``(..., 7)``."""
    d = np.asarray(goal, dtype=np.float64) - p
    yaw = np.asarray(yaw, dtype=np.float64)
    out = np.empty(np.broadcast_shapes(d.shape[:-1], v.shape[:-1], yaw.shape) + (N_STATE_FEATURES,))
    out[..., 0] = np.log(np.hypot(d[..., 0], d[..., 1]) + 1.0)
    out[..., 1] = np.hypot(v[..., 0], v[..., 1])
    out[..., 2] = np.arctan2(d[..., 1], d[..., 0])
    out[..., 3] = d[..., 2]
    out[..., 4] = v[..., 2]
    out[..., 5] = np.arctan2(v[..., 1], v[..., 0])
    out[..., 6] = yaw
    # arctan2 returns -pi for (-0.0, -x); fold onto +pi
    out[..., 2] = wrap_angle(out[..., 2])
    out[..., 5] = wrap_angle(out[..., 5])
    return out


def featurize(state: DroneState, goal) -> np.ndarray:
    """[d_hor, v_hor, beta', d_z, v_z, chi', yaw] for one drone."""
    return featurize_arrays(state.p, state.v, np.float64(state.yaw), goal)


TRAJECTORY_COLUMNS = ["t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "yaw",
                      "a_x", "a_y", "a_z", "yaw_rate", "reward"]


def write_trajectory_csv(path, times, positions, velocities, yaws, actions, rewards) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for row in zip(times, positions, velocities, yaws, actions, rewards):
            t, p, v, y, a, r = row
            w.writerow([repr(float(t)), *map(repr, map(float, p)), *map(repr, map(float, v)),
                        repr(float(y)), *map(repr, map(float, a)), repr(float(r))])
