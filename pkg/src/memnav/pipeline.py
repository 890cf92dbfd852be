"""The staged training pipeline and the artifact files it reads and writes.

Stages, in order: ``warmup`` (PPO with a random frozen front end in empty
worlds), ``collect`` (scan dataset flown by the warm-up policy), ``vae``,
``memory`` and ``ppo`` (curriculum retraining with the trained front end).
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from memnav.config import RunConfig, artifact_meta, derive_seed
from memnav.errors import ContractError, FormatError, StageDependencyError
from memnav.latent import VaeConfig, VaeModel, train_vae, vae_config_dict
from memnav.memory import MemoryConfig, MemoryModel, train_memory
from memnav.neural import checkpoint
from memnav.policy.actor_critic import ActorCritic
from memnav.policy.env import make_pool
from memnav.policy.perception import Perception, random_perception
from memnav.policy.train import TrainResult, actor_meta, collect_dataset, train_ppo
from memnav.sensor import ScanDataset
from memnav.dynamics import ActionLimits

STAGES = ("warmup", "collect", "vae", "memory", "ppo")
_NEEDS = {
    "collect": ("warmup_actor",),
    "vae": ("dataset",),
    "memory": ("dataset", "vae"),
    "ppo": ("vae", "memory"),
}
FILES = {
    "warmup_actor": "warmup/actor.ckpt",
    "dataset": "dataset.bin",
    "vae": "vae.ckpt",
    "memory": "memory.ckpt",
    "actor": "actor.ckpt",
}


# ---------------------------------------------------------------------------
# artifact files


def save_vae(path, vae: VaeModel, meta: dict | None = None) -> str:
    return checkpoint.save(path, vae.state_dict(),
                           {"kind": "vae", "vae_config": vae_config_dict(vae.config), **(meta or {})})


def _expect(meta: dict, kind: str, path) -> None:
    if meta.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')!r}")


def load_vae(path) -> VaeModel:
    state, meta = checkpoint.load(path)
    _expect(meta, "vae", path)
    vae = VaeModel(VaeConfig(**meta["vae_config"]))
    vae.load_state_dict(state)
    return vae


def save_memory(path, memory: MemoryModel, meta: dict | None = None) -> str:
    return checkpoint.save(path, memory.state_dict(),
                           {"kind": "memory", "memory_config": memory.config.to_dict(),
                            "n_e": memory.n_e, **(meta or {})})


def load_memory(path, vae: VaeModel) -> MemoryModel:
    state, meta = checkpoint.load(path)
    _expect(meta, "memory", path)
    if meta["n_e"] != vae.n_e:
        raise ContractError(f"memory checkpoint expects n_e={meta['n_e']}, VAE has n_e={vae.n_e}")
    mem = MemoryModel(vae, MemoryConfig(**meta["memory_config"]))
    mem.load_state_dict(state)
    return mem


def save_actor(path, model: ActorCritic, meta: dict | None = None) -> str:
    return checkpoint.save(path, model.state_dict(), actor_meta(model, **(meta or {})))


def load_actor(path, n_latent: int | None = None) -> ActorCritic:
    state, meta = checkpoint.load(path)
    _expect(meta, "actor", path)
    if n_latent is not None and meta["n_latent"] != n_latent:
        raise ContractError(f"actor expects latent width {meta['n_latent']}, memory provides {n_latent}")
    model = ActorCritic(meta["n_latent"], meta["hidden"], ActionLimits(*meta["limits"]))
    model.load_state_dict(state)
    return model


def load_bundle(vae_path, memory_path, actor_path) -> tuple[VaeModel, MemoryModel, ActorCritic]:
    """Load a (VAE, memory, actor) triple, refusing mismatched dimensions."""
    vae = load_vae(vae_path)
    mem = load_memory(memory_path, vae)
    actor = load_actor(actor_path, mem.config.n_l)
    return vae, mem, actor


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Artifacts:
    warmup_actor: ActorCritic | None = None
    dataset: ScanDataset | None = None
    vae: VaeModel | None = None
    memory: MemoryModel | None = None
    actor: ActorCritic | None = None
    warmup_run: TrainResult | None = None
    ppo_run: TrainResult | None = None
    curves: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)


def _fresh(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    return path


def _log_file(path: Path, meta: dict) -> Path:
    """Fresh JSON-lines log whose first line is a ``{"header": meta}`` record."""
    _fresh(path).write_text(json.dumps({"header": meta}, sort_keys=True) + "\n")
    return path


def read_jsonl(path) -> list[dict]:
    """Rows of a metrics/curve log, header record skipped."""
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    return [r for r in rows if "header" not in r]


def _load_missing(art: Artifacts, name: str, out: Path | None, config: RunConfig) -> None:
    if getattr(art, name) is not None or out is None:
        return
    path = out / FILES[name]
    if not path.exists():
        return
    if name == "dataset":
        art.dataset = ScanDataset.load(path)
    elif name == "vae":
        art.vae = load_vae(path)
    elif name == "memory":
        art.memory = load_memory(path, _require(art, "vae", "memory", out, config))
    elif name == "warmup_actor":
        art.warmup_actor = load_actor(path)
    elif name == "actor":
        art.actor = load_actor(path)


def _require(art: Artifacts, name: str, stage: str, out: Path | None, config: RunConfig):
    _load_missing(art, name, out, config)
    value = getattr(art, name)
    if value is None:
        raise StageDependencyError(f"stage {stage!r} needs {name!r}; run its stage first")
    return value


def vae_config_for(config: RunConfig) -> VaeConfig:
    return replace(config.vae, seed=derive_seed(config.seed, "vae") % (2**31))


def memory_config_for(config: RunConfig, variant: str | None = None) -> MemoryConfig:
    return replace(config.memory_config(variant), seed=derive_seed(config.seed, "memory") % (2**31))


def run_pipeline(config: RunConfig, stages=STAGES, out_dir=None, artifacts: Artifacts | None = None,
                 variant: str | None = None, log=None) -> Artifacts:
    """Execute ``stages`` (a subset of :data:`STAGES`, run in canonical order).

    Inputs missing from ``artifacts`` are loaded from ``out_dir`` when present;
    otherwise :class:`StageDependencyError` is raised.
    """
    stages = list(stages)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise StageDependencyError(f"unknown stages {unknown}; choose from {list(STAGES)}")
    art = artifacts or Artifacts()
    out = Path(out_dir) if out_dir is not None else None
    meta = artifact_meta(config)
    env_cfg = config.env
    say = log or (lambda msg: None)
    for stage in STAGES:
        if stage not in stages:
            continue
        for need in _NEEDS.get(stage, ()):
            _require(art, need, stage, out, config)
        say(f"stage {stage}")
        if stage == "warmup":
            seed = derive_seed(config.seed, "warmup") % (2**31)
            front = random_perception(config.ppo.workers, derive_seed(config.seed, "latent-init") % (2**31),
                                      vae_config_for(config), memory_config_for(config))
            run = train_ppo(front, [config.warmup], config.ppo, env_cfg, config.world, seed,
                            metrics_path=_log_file(out / "warmup/metrics.jsonl", meta) if out else None,
                            checkpoint_dir=out / "warmup" if out else None, meta=meta)
            art.warmup_run, art.warmup_actor = run, run.model
            if out:
                art.hashes["warmup_actor"] = save_actor(_fresh(out / FILES["warmup_actor"]), run.model,
                                                        {**meta, "stage": "warmup"})
        elif stage == "collect":
            dc = config.dataset
            seed = derive_seed(config.seed, "dataset") % (2**31)
            pool = make_pool(config.world, tuple(dc.poisson_radius), dc.n_worlds, seed, "dataset",
                             env_cfg.trav_samples)
            front = random_perception(1, derive_seed(config.seed, "latent-init") % (2**31),
                                      vae_config_for(config), memory_config_for(config))
            ds = collect_dataset(art.warmup_actor, front, pool, dc.episodes, env_cfg, seed, dc.horizon,
                                 config.ppo.workers)
            art.dataset = ScanDataset(ds.episodes, ds.frame_period, meta)
            if out:
                art.dataset.save(_fresh(out / FILES["dataset"]))
                art.hashes["dataset"] = checkpoint.file_hash(out / FILES["dataset"])
        elif stage == "vae":
            vae, curve = train_vae(art.dataset.frames(), vae_config_for(config),
                                   log_path=_log_file(out / "vae_curve.jsonl", meta) if out else None)
            art.vae, art.curves["vae"] = vae, curve
            if out:
                art.hashes["vae"] = save_vae(_fresh(out / FILES["vae"]), vae, meta)
        elif stage == "memory":
            mem, curve = train_memory(art.dataset, art.vae, memory_config_for(config, variant),
                                      log_path=_log_file(out / "memory_curve.jsonl", meta) if out else None)
            art.memory, art.curves["memory"] = mem, curve
            if out:
                art.hashes["memory"] = save_memory(_fresh(out / FILES["memory"]), mem, meta)
        elif stage == "ppo":
            _load_missing(art, "warmup_actor", out, config)
            front = Perception(art.vae, art.memory, config.ppo.workers)
            init = copy.deepcopy(art.warmup_actor) if art.warmup_actor is not None else None
            if init is not None and init.n_latent != front.n_l:
                init = None
            run = train_ppo(front, config.curriculum, config.ppo, env_cfg, config.world,
                            derive_seed(config.seed, "policy") % (2**31), model=init,
                            metrics_path=_log_file(out / "ppo/metrics.jsonl", meta) if out else None,
                            checkpoint_dir=out / "ppo" if out else None, meta=meta)
            art.ppo_run, art.actor = run, run.model
            if out:
                art.hashes["actor"] = save_actor(_fresh(out / FILES["actor"]), run.model,
                                                 {**meta, "stage": "ppo"})
    if out:
        manifest = {**meta, "stages": stages, "hashes": dict(sorted(art.hashes.items()))}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return art
