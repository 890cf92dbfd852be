"""Time the numba loop kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both paths are called directly, so the MEMNAV_NUMBA flag does not matter
here (with numba disabled the "loop" column is plain interpreted Python).
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from memnav import kernels
from memnav._accel import USE_NUMBA
from memnav.world import WorldSpec, generate_world


def _raycast_case(rng):
    world = generate_world(WorldSpec(poisson_radius=4.0, seed=3))
    origins = rng.uniform(2, 38, size=(32 * 64, 2))
    ang = rng.uniform(-np.pi, np.pi, size=len(origins))
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    lo, hi = world.lo[:2].copy(), world.hi[:2].copy()
    args = (origins, dirs, world.centers, world.radii, 0.3, lo, hi, True, 20.0)
    return "raycast 2048 rays x %d circles" % len(world.radii), kernels.raycast_loop, kernels.raycast_numpy, args


def _gae_case(rng):
    shape = (128, 16)
    r, v, nv = rng.normal(size=shape), rng.normal(size=shape), rng.normal(size=shape)
    term = rng.random(shape) < 0.02
    end = term | (rng.random(shape) < 0.01)
    return "gae 128x16", kernels.gae_loop, kernels.gae_numpy, (r, v, nv, term, end, 0.99, 0.95)


def _perm_case(rng):
    pooled = rng.random(20)
    perms = np.argsort(rng.random((10_000, 20)), axis=1)
    return "permutation count 10k x 20", kernels.perm_count_loop, kernels.perm_count_numpy, (pooled, perms, 10, 0.1)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    print(f"numba enabled: {USE_NUMBA}")
    print(f"{'kernel':36s} {'loop ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for case in (_raycast_case, _gae_case, _perm_case):
        name, loop_fn, np_fn, fargs = case(rng)
        a, b = loop_fn(*fargs), np_fn(*fargs)  # also triggers compilation
        if not np.allclose(a, b, atol=1e-9):
            print(f"{name}: paths disagree", file=sys.stderr)
            return 1
        t_loop = min(timeit.repeat(lambda: loop_fn(*fargs), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: np_fn(*fargs), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": name, "loop_ms": t_loop, "numpy_ms": t_np})
        print(f"{name:36s} {t_loop:10.3f} {t_np:10.3f} {t_np / t_loop:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": USE_NUMBA, "results": rows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
