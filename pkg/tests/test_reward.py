import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memnav.dynamics import Action
from memnav.errors import ConfigError, ContractError
from memnav.reward import (EventKind, RewardWeights, StepEvent, TerminalConstants, arrival_reward,
                           progress_reward, progress_reward_arrays, total_reward)

ZERO_W = RewardWeights(0, 0, 0, 0, 0, 0)


def _x(d_hor=0.0, v_hor=0.0, beta=0.0, d_z=0.0, v_z=0.0, chi=0.0, yaw=0.0):
    return np.array([d_hor, v_hor, beta, d_z, v_z, chi, yaw])


def scalar_reward(x, a, pa, w):
    """Term-by-term recomputation with plain floats."""
    d_hor, v_hor, beta, d_z, _, chi, yaw = map(float, x)
    ang = (chi + yaw - beta + math.pi) % (2 * math.pi) - math.pi
    jerk = math.sqrt(sum((float(pa[i]) - float(a[i])) ** 2 for i in range(3)))
    r = w.lambda_d * d_hor + w.lambda_b * abs(ang) + w.lambda_z * abs(d_z) + w.lambda_f * abs(chi)
    r += w.lambda_a * jerk
    if w.mode == "varying":
        r += w.lambda_v * v_hor if v_hor > w.v_max else 0.0
    else:
        r += w.lambda_v * abs(v_hor - w.v_desire)
    return min(0.0, max(-0.2, r))


def test_at_goal_aligned_is_zero():
    assert progress_reward(_x(), Action(), Action(), RewardWeights()) == 0.0


def test_velocity_gate_below_vmax():
    w = RewardWeights()
    assert progress_reward(_x(v_hor=w.v_max / 2), Action(), Action(), w) == 0.0
    assert progress_reward(_x(v_hor=w.v_max + 0.5), Action(), Action(), w) < 0.0


def test_lambda_d_example():
    w = RewardWeights(-0.001, 0, 0, 0, 0, 0)
    r = progress_reward(_x(d_hor=2.0), Action(), Action(), w)
    assert r == pytest.approx(-0.002, abs=1e-15)
    assert r == pytest.approx(scalar_reward(_x(d_hor=2.0), np.zeros(4), np.zeros(4), w), abs=1e-15)


def test_vectorised_bound_over_a_million_inputs():
    rng = np.random.default_rng(0)
    n = 1_000_000
    x = np.column_stack([rng.uniform(0, 6, n), rng.uniform(0, 10, n), rng.uniform(-np.pi, np.pi, n),
                         rng.uniform(-6, 6, n), rng.uniform(-5, 5, n), rng.uniform(-np.pi, np.pi, n),
                         rng.uniform(-np.pi, np.pi, n)])
    a, pa = rng.uniform(-3, 3, (n, 4)), rng.uniform(-3, 3, (n, 4))
    for mode in ("varying", "fixed"):
        r = progress_reward_arrays(x, a, pa, RewardWeights(mode=mode))
        assert r.min() >= -0.2 and r.max() <= 0.0


@settings(max_examples=300)
@given(st.lists(st.floats(-5, 5), min_size=7, max_size=7),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.sampled_from(["varying", "fixed"]))
def test_matches_scalar_oracle(x, a, pa, mode):
    x = np.array(x)
    x[0] = abs(x[0])
    x[1] = abs(x[1])
    w = RewardWeights(mode=mode)
    got = progress_reward(x, np.array(a), np.array(pa), w)
    assert got == pytest.approx(scalar_reward(x, a, pa, w), abs=1e-12)


@settings(max_examples=200)
@given(st.floats(0, 5), st.floats(0, 5))
def test_monotone_in_distance(d1, d2):
    w = RewardWeights()
    lo, hi = sorted((d1, d2))
    a = progress_reward(_x(d_hor=lo), Action(), Action(), w)
    b = progress_reward(_x(d_hor=hi), Action(), Action(), w)
    assert b <= a


def test_fixed_mode_peaks_at_v_desire():
    w = RewardWeights(mode="fixed", v_desire=2.5)
    speeds = np.linspace(0, 6, 601)
    r = [progress_reward(_x(v_hor=s), Action(), Action(), w) for s in speeds]
    assert speeds[int(np.argmax(r))] == pytest.approx(2.5)


def test_terminals_exact():
    w, c = RewardWeights(), TerminalConstants()
    assert total_reward(StepEvent(EventKind.COLLISION), _x(), Action(), Action(), w, c) == (-2.0, True)
    assert total_reward(StepEvent(EventKind.EXCEED), _x(), Action(), Action(), w, c) == (-2.0, True)
    assert total_reward(StepEvent(EventKind.ARRIVE, 10.0), _x(), Action(), Action(), w, c) == (1.0, True)
    r, done = total_reward(StepEvent(EventKind.PROGRESS), _x(d_hor=1.0), Action(), Action(), w, c)
    assert not done and r == pytest.approx(w.lambda_d)


def test_arrival_decreasing_in_trav():
    travs = np.linspace(3, 13, 50)
    vals = [arrival_reward(t) for t in travs]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert arrival_reward(13.0) == 10 / 13 and arrival_reward(3.0) == 10 / 3


@pytest.mark.parametrize("trav", [2.9, 13.1, float("nan")])
def test_arrival_out_of_range(trav):
    with pytest.raises(ContractError):
        arrival_reward(trav)


def test_positive_lambda_rejected():
    with pytest.raises(ConfigError):
        RewardWeights(lambda_d=0.1)
    with pytest.raises(ConfigError):
        RewardWeights(mode="other")
