"""Multi-seed experiments: latent-configuration comparison and varying- vs fixed-speed policies.

Both share one front end (warm-up actor, scan dataset, VAE) trained once from
the master seed; only the memory module and the final PPO stage are repeated
per seed. Run seeds are paired across configurations, so seed ``k`` of every
configuration starts from the same actor, rollout and memory streams.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from memnav import bench
from memnav.config import RunConfig, artifact_meta, derive_seed
from memnav.errors import ConfigError
from memnav.memory import train_memory
from memnav.neural import checkpoint
from memnav.pipeline import (FILES, Artifacts, _load_missing, memory_config_for, run_pipeline, save_actor,
                             save_memory)
from memnav.policy.actor_critic import ActorCritic
from memnav.policy.env import EnvConfig, make_pool
from memnav.policy.perception import Perception
from memnav.policy.train import TrainResult, train_ppo
from memnav.sensor import ScanDataset
from memnav.world import World

_FRONT_ORDER = ("warmup", "collect", "vae", "memory")
_FRONT_FILE = {"warmup": "warmup_actor", "collect": "dataset", "vae": "vae", "memory": "memory"}


def _artifact_hash(path: Path, name: str) -> str | None:
    try:
        if name == "dataset":
            return ScanDataset.load(path).meta.get("config_hash")
        return checkpoint.load(path)[1].get("config_hash")
    except (OSError, ValueError):
        return None


def ensure_front(config: RunConfig, out_dir=None, upto: str = "vae", log=None) -> Artifacts:
    """Front-end artifacts up to stage ``upto``, reusing files in ``out_dir`` built from the same config.

    A stale or missing file forces that stage and every later one to rerun.
    """
    if upto not in _FRONT_ORDER:
        raise ConfigError(f"upto must be one of {_FRONT_ORDER}")
    stages = list(_FRONT_ORDER[: _FRONT_ORDER.index(upto) + 1])
    out = Path(out_dir) if out_dir is not None else None
    todo = stages
    if out is not None:
        want = config.hash()
        for k, stage in enumerate(stages):
            path = out / FILES[_FRONT_FILE[stage]]
            if not path.exists() or _artifact_hash(path, _FRONT_FILE[stage]) != want:
                todo = stages[k:]
                break
        else:
            todo = []
    art = Artifacts()
    if todo:
        return run_pipeline(config, todo, out, art, log=log)
    for stage in stages:
        _load_missing(art, _FRONT_FILE[stage], out, config)
    return art


# ---------------------------------------------------------------------------
# shared pieces


@dataclass
class RunRecord:
    """One (configuration, seed) training run and its per-snapshot evaluation."""

    label: str
    seed_index: int
    iterations: list[int] = field(default_factory=list)
    success: list[float] = field(default_factory=list)
    agv: list[float] = field(default_factory=list)
    final_trials: list[bench.TrialResult] = field(default_factory=list)
    traces: list[bench.Trace] = field(default_factory=list)

    @property
    def best_success(self) -> float:
        return max(self.success)

    @property
    def final_success(self) -> float:
        return self.success[-1]

    def to_dict(self) -> dict:
        return {"label": self.label, "seed_index": self.seed_index, "iterations": self.iterations,
                "success": self.success, "agv": self.agv}


def _warm_start(art: Artifacts, n_latent: int) -> ActorCritic | None:
    if art.warmup_actor is None or art.warmup_actor.n_latent != n_latent:
        return None
    return copy.deepcopy(art.warmup_actor)


def _snapshot_actor(model: ActorCritic, state: dict) -> ActorCritic:
    actor = copy.deepcopy(model)
    actor.load_state_dict(state)
    return actor


def _eval_snapshots(label: str, k: int, run: TrainResult, vae, memory, maps, config: RunConfig,
                    env: EnvConfig, eval_seed: int, every: bool, record_final: bool) -> RunRecord:
    rec = RunRecord(label, k)
    snaps = run.snapshots if every else run.snapshots[-1:]
    for j, (it, state) in enumerate(snaps):
        record = record_final and j == len(snaps) - 1
        out = bench.evaluate((vae, memory, _snapshot_actor(run.model, state)), maps,
                             config.study.trials_per_map, (eval_seed,), env, record=record)
        trials, traces = out if record else (out, [])
        rec.iterations.append(it)
        rec.success.append(bench.success_rate(trials))
        rec.agv.append(bench.mean_agv(trials))
        if j == len(snaps) - 1:
            rec.final_trials, rec.traces = trials, traces
    return rec


def _mean_curve(records: list[RunRecord]) -> list[dict]:
    its = records[0].iterations
    succ = np.array([r.success for r in records])
    return [{"iteration": it, "success_mean": float(succ[:, j].mean()), "success_std": float(succ[:, j].std())}
            for j, it in enumerate(its)]


def _dump_run(out: Path | None, sub: str, rec: RunRecord, run: TrainResult, meta: dict) -> None:
    if out is None:
        return
    d = out / sub
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "metrics.jsonl", "w") as fh:
        fh.write(json.dumps({"header": meta}, sort_keys=True) + "\n")
        for line in run.metrics:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    doc = {"meta": meta, **rec.to_dict()}
    doc["agv"] = [None if np.isnan(a) else a for a in doc["agv"]]
    (d / "eval.json").write_text(json.dumps(doc, sort_keys=True, allow_nan=False) + "\n")
    save_actor(d / "actor.ckpt", run.model, {**meta, "label": rec.label, "seed_index": rec.seed_index})


# ---------------------------------------------------------------------------
# latent comparison


@dataclass
class LatentStudy:
    report: bench.BenchmarkReport
    runs: dict[str, list[RunRecord]]


def eval_maps_crafted(config: RunConfig) -> list[World]:
    st = config.study
    return bench.crafted_maps(st.eval_maps, derive_seed(config.seed, "eval-crafted") % 100_000, config.world,
                              st.crafted_radius, st.crafted_obstacles)


def latent_study(config: RunConfig, variants=("cur", "cur+past20"), seeds: int | None = None,
                 out_dir=None, front: Artifacts | None = None, log=None) -> LatentStudy:
    """Train memory + PPO per (variant, seed) and score each by its best checkpoint.

    Every snapshot is evaluated on held-out crafted large-obstacle maps with
    the deterministic policy; the report's rows hold best-checkpoint success
    per configuration and permutation p-values against the baselines.
    """
    variants = list(variants)
    if not variants:
        raise ConfigError("no latent configurations given")
    seeds = config.study.seeds if seeds is None else int(seeds)
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    say = log or (lambda m: None)
    out = Path(out_dir) if out_dir is not None else None
    art = front or ensure_front(config, out, "vae", log)
    env = config.env
    maps = eval_maps_crafted(config)
    pool = bench.worlds_pool(maps, env.trav_samples)
    stages = config.study.latent_curriculum()
    meta = artifact_meta(config, study="latents")
    runs: dict[str, list[RunRecord]] = {}
    for variant in variants:
        runs[variant] = []
        for k in range(seeds):
            say(f"latent {variant} seed {k}")
            mcfg = replace(memory_config_for(config, variant), seed=derive_seed(config.seed, "study-memory", k) % 2**31)
            memory, _ = train_memory(art.dataset, art.vae, mcfg)
            front_k = Perception(art.vae, memory, config.ppo.workers)
            run = train_ppo(front_k, stages, config.ppo, env, config.world,
                            derive_seed(config.seed, "study-policy", k) % 2**31,
                            model=_warm_start(art, memory.config.n_l))
            rec = _eval_snapshots(variant, k, run, art.vae, memory, pool, config, env,
                                  derive_seed(config.seed, "eval") % 2**31, every=True, record_final=False)
            runs[variant].append(rec)
            if out is not None:
                _dump_run(out, f"latents/{variant}/seed_{k:02d}", rec, run, meta)
                save_memory(out / f"latents/{variant}/seed_{k:02d}/memory.ckpt", memory, meta)
    scores = {v: [r.best_success for r in recs] for v, recs in runs.items()}
    report = bench.compare_latents(scores, n_perm=config.study.n_perm,
                                   seed=derive_seed(config.seed, "permutation") % 2**31)
    report.meta = {**meta, "variants": variants, "seeds": seeds,
                   "maps": len(maps), "trials_per_map": config.study.trials_per_map}
    report.curves = {v: _mean_curve(recs) for v, recs in runs.items()}
    report.trials = [{"config": v, **t.to_dict()} for v, recs in runs.items() for r in recs for t in r.final_trials]
    if out is not None:
        report.save(out / "latents", "report")
    return LatentStudy(report, runs)


# ---------------------------------------------------------------------------
# varying vs fixed speed


def speed_label(mode: str, v: float | None = None) -> str:
    return "varying" if mode == "varying" else f"fixed@{v:g}"


@dataclass
class SpeedStudy:
    report: bench.BenchmarkReport
    runs: dict[str, list[RunRecord]]
    points: dict[str, bench.ParetoPoint]
    front: list[bench.ParetoPoint]
    bins: list[bench.SpeedBin]
    rho: float

    def varying_dominated_by(self) -> list[str]:
        """Fixed-speed configurations whose (AGV, success) point dominates the varying one."""
        v = self.points["varying"]
        return [k for k, p in self.points.items() if k != "varying" and bench.dominates(p, v)]


def eval_maps_clutter(config: RunConfig) -> list[World]:
    st = config.study
    pool = make_pool(config.world, st.clutter_radius, st.eval_maps,
                     derive_seed(config.seed, "eval-clutter") % 100_000, "eval", config.env.trav_samples)
    return pool.worlds


def speed_study(config: RunConfig, speeds=None, seeds: int | None = None, out_dir=None,
                front: Artifacts | None = None, log=None) -> SpeedStudy:
    """Retrain the final PPO stage with varying-speed and fixed-speed rewards.

    All runs share the front end (including the memory module). The final
    checkpoint of each run is evaluated on held-out clutter maps; points are
    (mean AGV, success rate) averaged over seeds. The varying-speed runs also
    record per-frame scan brightness and speed for the density analysis.
    """
    speeds = tuple(config.study.speeds if speeds is None else speeds)
    seeds = config.study.speed_seeds if seeds is None else int(seeds)
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    say = log or (lambda m: None)
    out = Path(out_dir) if out_dir is not None else None
    art = front or ensure_front(config, out, "memory", log)
    maps = eval_maps_clutter(config)
    pool = bench.worlds_pool(maps, config.env.trav_samples)
    stages = config.study.speed_curriculum()
    meta = artifact_meta(config, study="speed")
    modes = [("varying", None)] + [("fixed", float(v)) for v in speeds]
    runs: dict[str, list[RunRecord]] = {}
    for mode, v in modes:
        label = speed_label(mode, v)
        weights = replace(config.reward, mode=mode, **({"v_desire": v} if v is not None else {}))
        env = replace(config.env, weights=weights)
        runs[label] = []
        for k in range(seeds):
            say(f"speed {label} seed {k}")
            front_k = Perception(art.vae, art.memory, config.ppo.workers)
            run = train_ppo(front_k, stages, config.ppo, env, config.world,
                            derive_seed(config.seed, "study-policy", k) % 2**31,
                            model=_warm_start(art, art.memory.config.n_l))
            # evaluation uses the same env either way; rewards do not affect outcomes
            rec = _eval_snapshots(label, k, run, art.vae, art.memory, pool, config, config.env,
                                  derive_seed(config.seed, "eval") % 2**31, every=False,
                                  record_final=mode == "varying")
            runs[label].append(rec)
            if out is not None:
                _dump_run(out, f"speed/{label}/seed_{k:02d}", rec, run, meta)
    points = {}
    for label, recs in runs.items():
        agvs = [r.agv[-1] for r in recs if np.isfinite(r.agv[-1])]
        points[label] = bench.ParetoPoint(float(np.mean(agvs)) if agvs else 0.0,
                                          float(np.mean([r.final_success for r in recs])), label)
    pf = bench.pareto_front(list(points.values()))
    traces = [t for r in runs["varying"] for t in r.traces]
    speed_frames = np.concatenate([t.speed for t in traces]) if traces else np.zeros(0)
    bright_frames = np.concatenate([t.brightness for t in traces]) if traces else np.zeros(0)
    bins = bench.speed_vs_density(speed_frames, bright_frames)
    rho = bench.speed_density_rho(bins)
    report = bench.BenchmarkReport()
    report.rows = [{"config": k, "agv": p.speed, "success": p.success, "on_front": p in pf,
                    "success_std": float(np.std([r.final_success for r in runs[k]])), "n_seeds": seeds}
                   for k, p in points.items()]
    report.agv_by_trav = bench.agv_by_trav([t for r in runs["varying"] for t in r.final_trials])
    report.curves = {"speed_vs_density": [vars(b) for b in bins],
                     "pareto": [{"config": p.label, "agv": p.speed, "success": p.success} for p in pf]}
    report.meta = {**meta, "speeds": list(speeds), "seeds": seeds, "rho": rho}
    report.trials = [{"config": k, **t.to_dict()} for k, recs in runs.items() for r in recs for t in r.final_trials]
    study = SpeedStudy(report, runs, points, pf, bins, rho)
    if out is not None:
        report.save(out / "speed", "report")
    return study
