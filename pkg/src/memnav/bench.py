"""Evaluation protocol: seeded trials, AGV, permutation tests, Pareto fronts, speed-vs-density."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from memnav import kernels
from memnav.errors import ConfigError, ContractError
from memnav.latent import VaeModel
from memnav.memory import MemoryModel
from memnav.policy.actor_critic import ActorCritic, act, observation
from memnav.policy.env import OUTCOMES, EnvConfig, VecNavEnv, WorldPool
from memnav.policy.perception import Perception
from memnav.world import World, WorldSpec, generate_world, traversability

N_PERMUTATIONS = 10_000
SIGNIFICANCE = 0.05
BASELINES = ("cur", "fut10")


@dataclass(frozen=True)
class TrialResult:
    map_id: int
    seed: int
    outcome: str
    flight_time: float
    path_length: float
    straight_distance: float
    mean_v_hor: float
    trav: float

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ContractError(f"unknown outcome {self.outcome!r}")

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trace:
    """Per-frame scan brightness (mean scan value) and horizontal speed of one trial."""

    brightness: list[float] = field(default_factory=list)
    speed: list[float] = field(default_factory=list)


def worlds_pool(maps: Sequence[World], trav_samples: int = 512, name: str = "eval") -> WorldPool:
    if isinstance(maps, WorldPool):
        return maps
    travs = [traversability(w, trav_samples, rng_seed=i).trav for i, w in enumerate(maps)]
    return WorldPool(list(maps), np.array(travs), name)


def trial_seed(seed: int, map_id: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(map_id), int(k), 51]).generate_state(1)[0])


def evaluate(bundle: tuple[VaeModel, MemoryModel, ActorCritic], maps, trials_per_map: int,
             seeds: Sequence[int] = (0,), env_config: EnvConfig = EnvConfig(), batch: int = 32,
             record: bool = False, start_goal: Callable | None = None):
    """Fly the deterministic (mean-action) policy on every ``(map, seed, trial)``.

    Each trial's start, goal, heading and sensor noise are drawn from its own
    seed, so a result depends only on ``(map, seed, trial index)``. Returns
    the trial list, plus per-trial traces when ``record`` is set.
    """
    vae, memory, actor = bundle
    if memory.n_e != vae.n_e:
        raise ContractError(f"memory expects n_e={memory.n_e}, VAE has {vae.n_e}")
    if actor.n_latent != memory.config.n_l:
        raise ContractError(f"actor expects latent width {actor.n_latent}, memory gives {memory.config.n_l}")
    if trials_per_map < 1 or not len(seeds):
        raise ConfigError("need at least one trial and one seed")
    pool = worlds_pool(maps)
    jobs = [(m, s, k) for s in seeds for m in range(len(pool.worlds)) for k in range(trials_per_map)]
    results: list[TrialResult] = []
    traces: list[Trace] = []
    for start in range(0, len(jobs), batch):
        chunk = jobs[start:start + batch]
        res, tr = _run_chunk(vae, memory, actor, pool, chunk, env_config, record, start_goal)
        results.extend(res)
        traces.extend(tr)
    return (results, traces) if record else results


def _run_chunk(vae, memory, actor, pool, chunk, env_config, record, start_goal):
    n = len(chunk)
    env = VecNavEnv(n, pool, env_config, seed=0, start_goal=start_goal)
    for i, (m, s, k) in enumerate(chunk):
        env.reset_to(i, m, trial_seed(s, m, k))
    front = Perception(vae, memory, n)
    out: list[TrialResult | None] = [None] * n
    traces = [Trace() for _ in range(n)]
    active = np.ones(n, dtype=bool)
    while active.any():
        if record:
            brightness = env.scans.mean(axis=1)
            speed = np.hypot(env.v[:, 0], env.v[:, 1])
            for i in np.nonzero(active)[0]:
                traces[i].brightness.append(float(brightness[i]))
                traces[i].speed.append(float(speed[i]))
        z = front.step(env.scans)
        action, _, _ = act(actor, observation(z, env.features()), deterministic=True)
        res = env.step(action)
        for st in res.episode_stats:
            i = st["slot"]
            if active[i]:
                m, s, _ = chunk[i]
                out[i] = TrialResult(m, s, st["outcome"], st["flight_time"], st["path_length"],
                                     st["straight_distance"], st["mean_v_hor"], st["trav"])
                active[i] = False
        front.reset(res.terminated | res.truncated)
    return out, traces if record else []


def success_rate(trials: Sequence[TrialResult]) -> float:
    return float(np.mean([t.success for t in trials])) if trials else float("nan")


def outcome_counts(trials: Sequence[TrialResult]) -> dict[str, int]:
    counts = {o: 0 for o in OUTCOMES}
    for t in trials:
        counts[t.outcome] += 1
    return counts


def agv(trial: TrialResult) -> float:
    """Average goal velocity: straight-line start-goal distance over flight time."""
    if not trial.success:
        raise ContractError(f"AGV is defined for successful trials only (got {trial.outcome})")
    if not trial.flight_time > 0:
        raise ContractError("flight time must be positive")
    return trial.straight_distance / trial.flight_time


def mean_agv(trials: Sequence[TrialResult]) -> float:
    ok = [agv(t) for t in trials if t.success]
    return float(np.mean(ok)) if ok else float("nan")


# ---------------------------------------------------------------------------
# statistics


def permutation_test(sample_a, sample_b, n_perm: int = N_PERMUTATIONS, seed: int = 0) -> float:
    """Two-sided permutation test on the difference of means, add-one estimator."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ConfigError("both samples must be non-empty")
    if n_perm < 1:
        raise ConfigError("n_perm must be >= 1")
    pooled = np.concatenate([a, b])
    observed = a.mean() - b.mean()
    rng = np.random.default_rng([seed, 61])
    perms = rng.permuted(np.tile(np.arange(pooled.size), (n_perm, 1)), axis=1)
    count = kernels.permutation_tail_count(pooled, perms, a.size, observed)
    return (1.0 + count) / (1.0 + n_perm)


def spearman_rho(x, y) -> float:
    if len(x) < 2:
        return float("nan")
    return float(spearmanr(x, y).statistic)


@dataclass(frozen=True)
class ParetoPoint:
    speed: float
    success: float
    label: str = ""


def pareto_front(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Points no other point matches-or-beats in both coordinates (strictly in one).

    Sweep from fastest to slowest, tracking the best success seen at strictly
    higher speed. Output is sorted by speed, ascending.
    """
    pts = sorted(points, key=lambda p: (-p.speed, -p.success))
    keep = []
    best_faster = -math.inf
    i = 0
    while i < len(pts):
        j = i
        while j < len(pts) and pts[j].speed == pts[i].speed:
            j += 1
        top = pts[i].success
        if top > best_faster:
            keep.extend(p for p in pts[i:j] if p.success == top)
        best_faster = max(best_faster, top)
        i = j
    return sorted(keep, key=lambda p: (p.speed, p.success))


def dominates(p: ParetoPoint, q: ParetoPoint) -> bool:
    return p.speed >= q.speed and p.success >= q.success and (p.speed > q.speed or p.success > q.success)


@dataclass(frozen=True)
class SpeedBin:
    lo: float
    hi: float
    count: int
    mean_speed: float
    std_speed: float
    mean_brightness: float


def speed_vs_density(speeds, brightness, n_bins: int = 6) -> list[SpeedBin]:
    """Bin frames by mean scan value into ``n_bins`` equal-width groups; empty bins omitted."""
    speeds = np.asarray(speeds, dtype=np.float64)
    brightness = np.asarray(brightness, dtype=np.float64)
    if speeds.shape != brightness.shape:
        raise ConfigError("speed and scan streams must be aligned")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    if len(speeds) < n_bins:
        warnings.warn(f"{len(speeds)} frames for {n_bins} bins; some bins are degenerate", stacklevel=2)
    if len(speeds) == 0:
        return []
    lo, hi = float(brightness.min()), float(brightness.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, brightness, side="right") - 1, 0, n_bins - 1)
    bins = []
    for k in range(n_bins):
        sel = idx == k
        if sel.any():
            bins.append(SpeedBin(float(edges[k]), float(edges[k + 1]), int(sel.sum()),
                                 float(speeds[sel].mean()), float(speeds[sel].std()),
                                 float(brightness[sel].mean())))
    return bins


def speed_density_rho(bins: Sequence[SpeedBin]) -> float:
    return spearman_rho([b.mean_brightness for b in bins], [b.mean_speed for b in bins])


# ---------------------------------------------------------------------------
# reports


@dataclass
class BenchmarkReport:
    rows: list[dict] = field(default_factory=list)
    p_values: dict[str, float] = field(default_factory=dict)
    curves: dict[str, list] = field(default_factory=dict)
    agv_by_trav: list[dict] = field(default_factory=list)
    trials: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def save(self, out_dir, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(self.to_json() + "\n")
        if self.trials:
            write_csv(out / f"{stem}_trials.csv", self.trials)


def write_csv(path, rows: Sequence[dict]) -> None:
    rows = list(rows)
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def compare_latents(scores: dict[str, Sequence[float]], baselines: Sequence[str] = BASELINES,
                    n_perm: int = N_PERMUTATIONS, seed: int = 0) -> BenchmarkReport:
    """Per-configuration best-checkpoint success (one value per seed) to a summary report.

    Each row carries mean/std across seeds and permutation p-values against
    every baseline that is present.
    """
    if not scores:
        raise ConfigError("no configurations to compare")
    report = BenchmarkReport()
    for name, vals in scores.items():
        vals = np.asarray(vals, dtype=np.float64)
        if vals.size == 0:
            raise ConfigError(f"configuration {name!r} has no seeds")
        if vals.size == 1:
            report.warnings.append(f"{name}: one seed only, std reported as 0")
        row = {"config": name, "n_seeds": int(vals.size), "success_mean": float(vals.mean()),
               "success_std": float(vals.std()) if vals.size > 1 else 0.0}
        for base in baselines:
            if base in scores and base != name:
                p = permutation_test(vals, scores[base], n_perm, seed)
                row[f"p_vs_{base}"] = p
                report.p_values[f"{name}|{base}"] = p
        report.rows.append(row)
    for w in report.warnings:
        warnings.warn(w, stacklevel=2)
    return report


def agv_by_trav(trials: Sequence[TrialResult], n_bins: int = 6, lo: float = 3.0, hi: float = 13.0) -> list[dict]:
    """Success rate and AGV per trav bin (six equal-width groups by default)."""
    edges = np.linspace(lo, hi, n_bins + 1)
    out = []
    for k in range(n_bins):
        sel = [t for t in trials if edges[k] <= t.trav < edges[k + 1] or (k == n_bins - 1 and t.trav == hi)]
        if sel:
            out.append({"trav_lo": float(edges[k]), "trav_hi": float(edges[k + 1]), "trials": len(sel),
                        "success_rate": success_rate(sel), "agv": mean_agv(sel)})
    return out


def crafted_maps(n: int, seed: int, template: WorldSpec = WorldSpec(), poisson_radius: float = 10.0,
                 obstacle_radius_range: tuple[float, float] = (2.5, 4.5)) -> list[World]:
    """Sparse fields of large cylinders: obstacles that leave the field of view while being passed."""
    return [generate_world(template.with_(poisson_radius=poisson_radius,
                                          obstacle_radius_range=obstacle_radius_range,
                                          seed=int(seed) * 1000 + i)) for i in range(n)]
