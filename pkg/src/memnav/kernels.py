"""Hot numeric kernels with a numba path and a numpy path.

Each public function dispatches on :data:`memnav._accel.USE_NUMBA`. The
``*_loop`` variants are the jitted versions, the ``*_numpy`` variants are
vectorised fallbacks. Both must agree to round-off; ``tests/test_kernels.py``
holds them to that.
"""
from __future__ import annotations

import math

import numpy as np

from memnav._accel import USE_NUMBA, njit

# Relative slack used when comparing resampled statistics against the observed
# one, so exact ties survive float summation order.
TIE_RTOL = 1e-12


# --------------------------------------------------------------------------
# ray casting against vertical cylinders (circles in the horizontal plane)


@njit
def raycast_loop(origins, dirs, centers, radii, inflate, lo, hi, use_bounds, max_dist):
    n = origins.shape[0]
    m = centers.shape[0]
    out = np.empty(n)
    for i in range(n):
        ox = origins[i, 0]
        oy = origins[i, 1]
        ux = dirs[i, 0]
        uy = dirs[i, 1]
        best = max_dist
        if use_bounds:
            if ux > 0.0:
                t = (hi[0] - ox) / ux
                if t < best:
                    best = t
            elif ux < 0.0:
                t = (lo[0] - ox) / ux
                if t < best:
                    best = t
            if uy > 0.0:
                t = (hi[1] - oy) / uy
                if t < best:
                    best = t
            elif uy < 0.0:
                t = (lo[1] - oy) / uy
                if t < best:
                    best = t
            if best < 0.0:
                best = 0.0
        for j in range(m):
            fx = ox - centers[j, 0]
            fy = oy - centers[j, 1]
            r = radii[j] + inflate
            c = fx * fx + fy * fy - r * r
            if c <= 0.0:
                best = 0.0
                break
            b = fx * ux + fy * uy
            if b >= 0.0:
                continue
            disc = b * b - c
            if disc < 0.0:
                continue
            t = -b - math.sqrt(disc)
            if t < best:
                best = t
        out[i] = best
    return out


def raycast_numpy(origins, dirs, centers, radii, inflate, lo, hi, use_bounds, max_dist):
    n = origins.shape[0]
    best = np.full(n, float(max_dist))
    if use_bounds:
        ux, uy = dirs[:, 0], dirs[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            tx = np.where(ux > 0, (hi[0] - origins[:, 0]) / ux,
                          np.where(ux < 0, (lo[0] - origins[:, 0]) / ux, np.inf))
            ty = np.where(uy > 0, (hi[1] - origins[:, 1]) / uy,
                          np.where(uy < 0, (lo[1] - origins[:, 1]) / uy, np.inf))
        best = np.minimum(best, np.minimum(tx, ty))
        best = np.maximum(best, 0.0)
    if centers.shape[0] == 0:
        return best
    f = origins[:, None, :] - centers[None, :, :]
    r = radii[None, :] + inflate
    c = f[..., 0] * f[..., 0] + f[..., 1] * f[..., 1] - r * r
    b = f[..., 0] * dirs[:, None, 0] + f[..., 1] * dirs[:, None, 1]
    disc = b * b - c
    hit = (b < 0.0) & (disc >= 0.0)
    t = np.where(hit, -b - np.sqrt(np.where(hit, disc, 0.0)), np.inf)
    best = np.minimum(best, t.min(axis=1))
    inside = (c <= 0.0).any(axis=1)
    best[inside] = 0.0
    return best


def raycast(origins, dirs, centers, radii, inflate=0.0, lo=None, hi=None, max_dist=np.inf):
    """Distance along each unit ray to the first circle (radius + ``inflate``).

    When ``lo``/``hi`` are given the axis-aligned box walls also stop rays.
    Rays starting inside a circle report 0. Misses report ``max_dist``.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 2)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 2)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    radii = np.ascontiguousarray(radii, dtype=np.float64).reshape(-1)
    use_bounds = lo is not None
    lo_a = np.zeros(2) if lo is None else np.ascontiguousarray(lo[:2], dtype=np.float64)
    hi_a = np.zeros(2) if hi is None else np.ascontiguousarray(hi[:2], dtype=np.float64)
    fn = raycast_loop if USE_NUMBA else raycast_numpy
    return fn(origins, dirs, centers, radii, float(inflate), lo_a, hi_a, use_bounds, float(max_dist))


# --------------------------------------------------------------------------
# generalised advantage estimation over a (time, env) grid


@njit
def gae_loop(rewards, values, next_values, terminated, ended, gamma, lam):
    steps, envs = rewards.shape
    adv = np.zeros((steps, envs))
    for e in range(envs):
        running = 0.0
        for t in range(steps - 1, -1, -1):
            keep = 0.0 if terminated[t, e] else 1.0
            delta = rewards[t, e] + gamma * keep * next_values[t, e] - values[t, e]
            cont = 0.0 if ended[t, e] else 1.0
            running = delta + gamma * lam * cont * running
            adv[t, e] = running
    return adv


def gae_numpy(rewards, values, next_values, terminated, ended, gamma, lam):
    steps = rewards.shape[0]
    keep = 1.0 - terminated.astype(np.float64)
    cont = 1.0 - ended.astype(np.float64)
    delta = rewards + gamma * keep * next_values - values
    adv = np.zeros_like(delta)
    running = np.zeros(rewards.shape[1])
    for t in range(steps - 1, -1, -1):
        running = delta[t] + gamma * lam * cont[t] * running
        adv[t] = running
    return adv


def gae(rewards, values, next_values, terminated, ended, gamma, lam):
    """Raw (unnormalised) GAE advantages for arrays shaped ``(steps, envs)``.

    ``terminated`` marks true terminal transitions (no bootstrap);
    ``ended`` marks any episode boundary, terminal or truncated, where the
    advantage recursion is cut.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (rewards, values, next_values)]
    if args[0].ndim == 1:
        args = [a[:, None] for a in args]
    term = np.ascontiguousarray(terminated, dtype=np.bool_).reshape(args[0].shape)
    end = np.ascontiguousarray(ended, dtype=np.bool_).reshape(args[0].shape) | term
    fn = gae_loop if USE_NUMBA else gae_numpy
    out = fn(args[0], args[1], args[2], term, end, float(gamma), float(lam))
    return out.reshape(np.shape(rewards))


# --------------------------------------------------------------------------
# permutation test tail counting


@njit
def perm_count_loop(pooled, perms, n_a, observed):
    n = pooled.shape[0]
    n_b = n - n_a
    thresh = abs(observed) * (1.0 - TIE_RTOL) - 1e-15
    count = 0
    for p in range(perms.shape[0]):
        sa = 0.0
        sb = 0.0
        for k in range(n):
            v = pooled[perms[p, k]]
            if k < n_a:
                sa += v
            else:
                sb += v
        if abs(sa / n_a - sb / n_b) >= thresh:
            count += 1
    return count


def perm_count_numpy(pooled, perms, n_a, observed):
    shuffled = pooled[perms]
    diff = shuffled[:, :n_a].mean(axis=1) - shuffled[:, n_a:].mean(axis=1)
    thresh = abs(observed) * (1.0 - TIE_RTOL) - 1e-15
    return int(np.count_nonzero(np.abs(diff) >= thresh))


def permutation_tail_count(pooled, perms, n_a, observed):
    """Number of index permutations whose |mean difference| reaches ``observed``."""
    pooled = np.ascontiguousarray(pooled, dtype=np.float64)
    perms = np.ascontiguousarray(perms, dtype=np.int64)
    fn = perm_count_loop if USE_NUMBA else perm_count_numpy
    return int(fn(pooled, perms, int(n_a), float(observed)))
