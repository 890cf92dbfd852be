"""Environment, dataset collection, staged pipeline, artifact files and reruns."""
import filecmp
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from memnav.config import DatasetConfig, RunConfig
from memnav.errors import ContractError, FormatError, StageDependencyError
from memnav.latent import VaeConfig, VaeModel
from memnav.memory import MemoryConfig, MemoryModel
from memnav.pipeline import (FILES, load_bundle, read_jsonl, run_pipeline, save_actor, save_memory,
                             save_vae)
from memnav.policy import ActorCritic, EnvConfig, VecNavEnv, WorldPool, make_pool
from memnav.policy.perception import random_perception
from memnav.policy.ppo import PpoConfig
from memnav.policy.train import CurriculumStage, collect_dataset
from memnav.sensor import NoiseParams
from memnav.world import WorldSpec, empty_world, generate_world, traversability


def tiny_config(seed=0) -> RunConfig:
    return RunConfig(
        ppo=PpoConfig(horizon=16, workers=4, minibatch_size=32, checkpoint_interval=2),
        warmup=CurriculumStage("empty", None, 2, n_worlds=2),
        dataset=DatasetConfig(episodes=6, horizon=60, n_worlds=3),
        vae=VaeConfig(n_e=8, epochs=1, channels=(2, 2, 4, 4, 8, 8)),
        memory=MemoryConfig(n_l=16, epochs=1, seq_len=32),
        curriculum=(CurriculumStage("warmup", 12.0, 1, n_worlds=2),
                    CurriculumStage("clutter", (3.0, 5.4), 2, n_worlds=2)),
        max_steps=60, seed=seed)


def _empty_pool(n=2):
    worlds = [empty_world(WorldSpec(seed=i)) for i in range(n)]
    return WorldPool(worlds, np.array([traversability(w, 64).trav for w in worlds]))


# ---------------------------------------------------------------------------
# env


def test_env_resets_and_reports_episodes():
    env = VecNavEnv(3, _empty_pool(), EnvConfig(max_steps=5), seed=1)
    outcomes = []
    for _ in range(5):
        res = env.step(np.zeros((3, 4)))
        outcomes += [s["outcome"] for s in res.episode_stats]
    assert outcomes == ["timeout"] * 3
    assert res.truncated.all() and not res.terminated.any()
    assert (env.t == 0).all()


def test_env_flying_out_of_bounds_is_exceed():
    env = VecNavEnv(1, _empty_pool(1), EnvConfig(), seed=0)
    for _ in range(200):
        res = env.step(np.array([[0.0, 0.0, 3.0, 0.0]]))
        if res.episode_stats:
            break
    assert res.episode_stats[0]["outcome"] == "exceed"
    assert res.rewards[0] == -2.0 and res.terminated[0]


def test_reset_to_is_reproducible():
    pool = make_pool(WorldSpec(), (4.0, 5.0), 3, 0)
    a = VecNavEnv(2, pool, seed=0)
    b = VecNavEnv(3, pool, seed=9)
    a.reset_to(1, 2, 77)
    b.reset_to(0, 2, 77)
    np.testing.assert_array_equal(a.p[1], b.p[0])
    np.testing.assert_array_equal(a.scans[1], b.scans[0])
    for _ in range(4):
        act = np.tile([[0.5, 0.1, 0.0, 0.2]], (3, 1))
        a.step(act[:2])
        b.step(act)
        np.testing.assert_array_equal(a.scans[1], b.scans[0])


def test_curriculum_stage_validation():
    from memnav.errors import ConfigError
    with pytest.raises(ConfigError):
        CurriculumStage("x", 3.0, 0)
    with pytest.raises(ConfigError):
        CurriculumStage("x", (5.0, 3.0), 1)
    assert CurriculumStage("x", [3, 5.4], 1).poisson_radius == (3.0, 5.4)


def test_clutter_stage_radii_in_range():
    pool = make_pool(WorldSpec(), (3.0, 5.4), 12, seed=4)
    radii = [w.spec.poisson_radius for w in pool.worlds]
    assert min(radii) >= 3.0 and max(radii) <= 5.4


# ---------------------------------------------------------------------------
# dataset collection


def _actor(n_l=16):
    return ActorCritic(n_l, 8, rng=np.random.default_rng(0))


def _front(n_l=16):
    return random_perception(1, 0, VaeConfig(n_e=8), MemoryConfig(n_l=n_l))


def test_collect_one_short_episode():
    ds = collect_dataset(_actor(), _front(), _empty_pool(), 1, EnvConfig(), seed=0, horizon=10)
    assert len(ds) == 1 and 1 <= len(ds.episodes[0]) <= 10


def test_collect_empty_world_all_ones():
    # walls count as obstacles for the camera, so the box is made far larger than the range
    big = empty_world(WorldSpec(bounds_max=(40000.0, 40000.0, 6.0)))
    pool = WorldPool([big], np.array([13.0]))
    cfg = EnvConfig(noise=NoiseParams(0.0, 0.0, 0))
    ds = collect_dataset(_actor(), _front(), pool, 4, cfg, seed=0, horizon=15)
    assert all((ep == 1.0).all() for ep in ds.episodes)


def test_collect_spans_clutter_levels():
    worlds = [generate_world(WorldSpec(poisson_radius=r, seed=i)) for i, r in enumerate([3.0, 4.0, 5.0] * 2)]
    pool = WorldPool(worlds, np.array([traversability(w, 64).trav for w in worlds]))
    ds = collect_dataset(_actor(), _front(), pool, 200, EnvConfig(), seed=3, horizon=20)
    assert len(ds) == 200
    means = np.array([ep.mean() for ep in ds.episodes])
    hist, _ = np.histogram(means, bins=10, range=(0, 1))
    assert np.count_nonzero(hist) >= 3


def test_collect_is_deterministic():
    a = collect_dataset(_actor(), _front(), _empty_pool(), 5, EnvConfig(), seed=2, horizon=12)
    b = collect_dataset(_actor(), _front(), _empty_pool(), 5, EnvConfig(), seed=2, horizon=12)
    for x, y in zip(a.episodes, b.episodes):
        np.testing.assert_array_equal(x, y)


# ---------------------------------------------------------------------------
# pipeline


def test_stage_dependencies(tmp_path):
    cfg = tiny_config()
    with pytest.raises(StageDependencyError):
        run_pipeline(cfg, ["memory"], tmp_path)
    with pytest.raises(StageDependencyError):
        run_pipeline(cfg, ["vae"], tmp_path)
    with pytest.raises(StageDependencyError):
        run_pipeline(cfg, ["ppo"], tmp_path)
    with pytest.raises(StageDependencyError):
        run_pipeline(cfg, ["bogus"], tmp_path)


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    cfg = tiny_config()
    dirs = [tmp_path_factory.mktemp(f"run{k}") for k in range(2)]
    arts = [run_pipeline(cfg, out_dir=d) for d in dirs]
    return cfg, dirs, arts


def test_pipeline_writes_every_artifact(tiny_runs):
    cfg, (d, _), (art, _) = tiny_runs
    for rel in FILES.values():
        assert (d / rel).exists(), rel
    assert (d / "manifest.json").exists()
    snaps = sorted(p.name for p in (d / "ppo").glob("actor_*.ckpt"))
    assert snaps == ["actor_0002.ckpt", "actor_0003.ckpt"]
    rows = read_jsonl(d / "ppo/metrics.jsonl")
    assert [r["stage"] for r in rows] == ["warmup", "clutter", "clutter"]
    assert {"iteration", "success_fraction", "mean_return", "mean_v_hor", "policy_loss"} <= set(rows[0])
    head = (d / "ppo/metrics.jsonl").read_text().splitlines()[0]
    assert cfg.hash() in head and '"version"' in head


def test_pipeline_rerun_is_byte_identical(tiny_runs):
    _, (d1, d2), (a1, a2) = tiny_runs
    assert a1.hashes == a2.hashes
    files = sorted(str(p.relative_to(d1)) for p in d1.rglob("*") if p.is_file())
    assert files == sorted(str(p.relative_to(d2)) for p in d2.rglob("*") if p.is_file())
    _, mismatch, errors = filecmp.cmpfiles(d1, d2, files, shallow=False)
    assert not mismatch and not errors


def test_stages_resume_from_files(tiny_runs, tmp_path):
    cfg, (d, _), (art, _) = tiny_runs
    for rel in ("warmup/actor.ckpt", "dataset.bin", "vae.ckpt"):
        (tmp_path / rel).parent.mkdir(parents=True, exist_ok=True)
        (tmp_path / rel).write_bytes((d / rel).read_bytes())
    resumed = run_pipeline(cfg, ["memory"], tmp_path)
    assert resumed.hashes["memory"] == art.hashes["memory"]


def test_bundle_loads_and_refuses_mismatch(tiny_runs, tmp_path):
    _, (d, _), (art, _) = tiny_runs
    vae, mem, actor = load_bundle(d / "vae.ckpt", d / "memory.ckpt", d / "actor.ckpt")
    assert actor.n_latent == mem.config.n_l
    other = VaeModel(VaeConfig(n_e=4))
    save_vae(tmp_path / "v4.ckpt", other)
    with pytest.raises(ContractError):
        load_bundle(tmp_path / "v4.ckpt", d / "memory.ckpt", d / "actor.ckpt")
    save_memory(tmp_path / "m.ckpt", MemoryModel(vae, MemoryConfig(n_l=8)))
    with pytest.raises(ContractError):
        load_bundle(d / "vae.ckpt", tmp_path / "m.ckpt", d / "actor.ckpt")
    with pytest.raises(FormatError):
        load_bundle(d / "actor.ckpt", d / "memory.ckpt", d / "actor.ckpt")


def test_warm_start_keeps_the_same_observation_width(tiny_runs):
    _, _, (art, _) = tiny_runs
    assert art.warmup_actor.n_latent == art.memory.config.n_l == art.actor.n_latent
