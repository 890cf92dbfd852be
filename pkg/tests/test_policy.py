"""Actor-critic sampling, GAE against an unrolled oracle, PPO loss properties, toy learning."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memnav import kernels
from memnav.dynamics import ActionLimits
from memnav.errors import ShapeError
from memnav.neural.gradcheck import gradcheck
from memnav.neural.optim import Adam
from memnav.policy import ActorCritic, PpoConfig, RolloutBuffer, act, compute_gae, ppo_update
from memnav.policy.ppo import ppo_loss

N_X = 7


def _model(n_latent=3, hidden=8, seed=0):
    return ActorCritic(n_latent, hidden, rng=np.random.default_rng(seed))


def _obs(rng, n, n_latent=3):
    return np.concatenate([rng.normal(size=(n, n_latent)), rng.uniform(-2, 2, (n, N_X))], axis=1)


# ---------------------------------------------------------------------------
# act


def test_deterministic_act_repeats(rng):
    m, o = _model(), _obs(rng, 4)
    a1, lp1, v1 = act(m, o, deterministic=True)
    a2, lp2, v2 = act(m, o, deterministic=True)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(v1, v2)


def test_mean_is_squashed_into_limits(rng):
    m = _model()
    m.mu.weight.data *= 1e3
    a, _, _ = act(m, _obs(rng, 64) * 10, deterministic=True)
    assert (np.abs(a) <= ActionLimits().as_array() + 1e-12).all()


def test_tiny_std_sample_equals_mean(rng):
    m, o = _model(), _obs(rng, 3)
    m.log_std.data[...] = -60.0
    sample, _, _ = act(m, o, np.random.default_rng(0))
    mean, _, _ = act(m, o, deterministic=True)
    np.testing.assert_allclose(sample, mean, atol=1e-20)


def test_sample_covariance_matches_log_std(rng):
    m = _model()
    o = np.repeat(_obs(rng, 1), 10_000, axis=0)
    a, _, _ = act(m, o, np.random.default_rng(5))
    cov = np.cov(a.T)
    expected = np.exp(2 * m.log_std.data)
    np.testing.assert_allclose(np.diag(cov), expected, rtol=0.1)
    off = cov - np.diag(np.diag(cov))
    assert np.abs(off).max() < 0.1 * expected.min()


def test_log_prob_is_gaussian_density(rng):
    m, o = _model(), _obs(rng, 5)
    a, lp, _ = act(m, o, np.random.default_rng(1))
    mean, _, _ = act(m, o, deterministic=True)
    s = np.exp(m.log_std.data)
    ref = np.sum(-0.5 * ((a - mean) / s) ** 2 - np.log(s * math.sqrt(2 * math.pi)), axis=1)
    np.testing.assert_allclose(lp, ref, atol=1e-12)


def test_observation_width_checked(rng):
    with pytest.raises(ShapeError):
        act(_model(), np.zeros((2, 5)))


# ---------------------------------------------------------------------------
# GAE


def _gae_oracle(r, v, nv, term, ended, gamma, lam):
    steps, envs = r.shape
    adv = np.zeros_like(r)
    for e in range(envs):
        for t in range(steps):
            total, coef = 0.0, 1.0
            for k in range(t, steps):
                delta = r[k, e] + gamma * (0.0 if term[k, e] else nv[k, e]) - v[k, e]
                total += coef * delta
                if ended[k, e] or term[k, e]:
                    break
                coef *= gamma * lam
            adv[t, e] = total
    return adv


def _buffer(r, v, nv, term, trunc):
    shape = r.shape
    return RolloutBuffer(np.zeros(shape + (1,)), np.zeros(shape + (4,)), np.zeros(shape), v, r, term, trunc, nv)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 16), st.integers(1, 3), st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_gae_matches_unrolled_oracle(steps, envs, gamma, lam, seed):
    g = np.random.default_rng(seed)
    r, v, nv = (g.normal(size=(steps, envs)) for _ in range(3))
    term = g.random((steps, envs)) < 0.2
    trunc = ~term & (g.random((steps, envs)) < 0.15)
    adv, ret = compute_gae(_buffer(r, v, nv, term, trunc), gamma, lam, normalize=False)
    ref = _gae_oracle(r, v, nv, term, term | trunc, gamma, lam)
    np.testing.assert_allclose(adv, ref, atol=1e-10, rtol=0)
    np.testing.assert_allclose(ret, ref + v, atol=1e-10, rtol=0)


def test_gae_telescopes_to_return_minus_value(rng):
    r, v = rng.normal(size=(6, 1)), rng.normal(size=(6, 1))
    nv = np.vstack([v[1:], [[0.0]]])
    term = np.zeros((6, 1), bool)
    term[-1] = True
    adv, _ = compute_gae(_buffer(r, v, nv, term, np.zeros_like(term)), 1.0, 1.0, normalize=False)
    np.testing.assert_allclose(adv[:, 0], np.cumsum(r[::-1, 0])[::-1] - v[:, 0], atol=1e-12)


def test_gae_zero_everything():
    z = np.zeros((5, 2))
    adv, ret = compute_gae(_buffer(z, z, z, z.astype(bool), z.astype(bool)), 0.99, 0.95)
    assert not adv.any() and not ret.any()


def test_gae_normalised(rng):
    r, v, nv = (rng.normal(size=(16, 4)) for _ in range(3))
    f = np.zeros((16, 4), bool)
    adv, _ = compute_gae(_buffer(r, v, nv, f, f), 0.99, 0.95)
    assert abs(adv.mean()) < 1e-12 and abs(adv.std() - 1) < 1e-6


def test_gae_truncation_bootstraps(rng):
    r = np.array([[1.0], [1.0]])
    v = np.zeros((2, 1))
    nv = np.array([[0.0], [5.0]])
    trunc = np.array([[False], [True]])
    adv, _ = compute_gae(_buffer(r, v, nv, np.zeros_like(trunc), trunc), 0.5, 1.0, normalize=False)
    assert adv[1, 0] == pytest.approx(1 + 0.5 * 5)
    # step 0 bootstraps from v(s1)=0 and then continues into step 1
    assert adv[0, 0] == pytest.approx(1 + 0.5 * adv[1, 0])


# ---------------------------------------------------------------------------
# PPO loss


def _loss_inputs(rng, model, n=6, ratio_shift=0.05):
    obs = _obs(rng, n)
    actions, logp, _ = act(model, obs, np.random.default_rng(2))
    old = logp + rng.uniform(-ratio_shift, ratio_shift, n)
    return obs, actions, old, rng.normal(size=n), rng.normal(size=n)


def test_ppo_surrogate_gradient(rng):
    model = _model(hidden=5)
    model.log_std.data[...] = np.log([0.8, 0.7, 0.9, 0.5])
    args = _loss_inputs(rng, model)
    cfg = PpoConfig(entropy_coef=0.01)
    fn = lambda: ppo_loss(model, *args, cfg)[0]
    assert gradcheck(fn, model.parameters()) < 1e-4


@pytest.mark.parametrize("adv,shift", [(1.0, -0.5), (-1.0, 0.5)])
def test_clip_saturation_has_zero_policy_gradient(rng, adv, shift):
    # ratio = exp(logp - old): shift -0.5 gives ratio e^0.5 > 1.2, +0.5 gives e^-0.5 < 0.8
    model = _model()
    cfg = PpoConfig(value_coef=0.0, entropy_coef=0.0)
    for _ in range(5):
        obs = _obs(rng, 1)
        a, logp, _ = act(model, obs, rng)
        model.zero_grad()
        loss, stats = ppo_loss(model, obs, a, logp + shift, np.array([adv]), np.zeros(1), cfg)
        loss.backward()
        assert stats["clip_fraction"] == 1.0
        for p in model.parameters():
            assert p.grad is None or not p.grad.any()


def test_zero_advantage_moves_only_value_and_entropy(rng):
    model = _model()
    obs, actions, old, _, ret = _loss_inputs(rng, model)
    cfg = PpoConfig(value_coef=0.0, entropy_coef=0.0)
    model.zero_grad()
    loss, _ = ppo_loss(model, obs, actions, old, np.zeros(len(old)), ret, cfg)
    loss.backward()
    assert all(p.grad is None or not p.grad.any() for p in model.parameters())
    cfg = PpoConfig(value_coef=0.5, entropy_coef=0.0)
    model.zero_grad()
    ppo_loss(model, obs, actions, old, np.zeros(len(old)), ret, cfg)[0].backward()
    assert model.value.weight.grad.any()
    assert model.mu.weight.grad is None or not model.mu.weight.grad.any()


def test_update_rejects_nonfinite(rng):
    from memnav.errors import NonFiniteError
    model = _model()
    n = 8
    obs = _obs(rng, n)[:, None, :]
    buf = _buffer(np.full((n, 1), np.nan), np.zeros((n, 1)), np.zeros((n, 1)),
                  np.zeros((n, 1), bool), np.zeros((n, 1), bool))
    buf.obs, buf.actions, buf.log_probs = obs, np.zeros((n, 1, 4)), np.zeros((n, 1))
    with pytest.raises(NonFiniteError):
        ppo_update(model, buf, PpoConfig(minibatch_size=4), Adam(model.named_parameters()), rng)


# ---------------------------------------------------------------------------
# toy reach-target task: x_{t+1} = x_t + 0.1 a_x, reward -|x|


def _toy_run(seed, iterations=50, envs=16, horizon=20):
    g = np.random.default_rng(seed)
    model = ActorCritic(1, 16, rng=np.random.default_rng([seed, 1]))
    cfg = PpoConfig(horizon=horizon, workers=envs, minibatch_size=80, epochs=4, lr=3e-3, gamma=0.95)
    opt = Adam(model.named_parameters(), lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)
    returns = []
    for _ in range(iterations):
        x = g.uniform(-1, 1, envs)
        shape = (horizon, envs)
        buf = RolloutBuffer(np.zeros(shape + (1 + N_X,)), np.zeros(shape + (4,)), np.zeros(shape),
                            np.zeros(shape), np.zeros(shape), np.zeros(shape, bool), np.zeros(shape, bool),
                            np.zeros(shape))
        for t in range(horizon):
            obs = np.concatenate([x[:, None], np.zeros((envs, N_X))], axis=1)
            a, lp, v = act(model, obs, g)
            x = np.clip(x + 0.1 * np.clip(a[:, 0], -3, 3), -3, 3)
            buf.obs[t], buf.actions[t], buf.log_probs[t], buf.values[t] = obs, a, lp, v
            buf.rewards[t] = -np.abs(x)
        buf.truncated[-1] = True
        last = np.concatenate([x[:, None], np.zeros((envs, N_X))], axis=1)
        buf.next_values = np.vstack([buf.values[1:], act(model, last, deterministic=True)[2][None]])
        returns.append(buf.rewards.sum(axis=0).mean())
        ppo_update(model, buf, cfg, opt, g)
    return np.array(returns)


def test_toy_task_improves():
    curves = np.array([_toy_run(s) for s in range(5)])
    median = np.median(curves, axis=0)
    blocks = median.reshape(5, 10).mean(axis=1)
    assert (np.diff(blocks) > 0).all(), blocks
