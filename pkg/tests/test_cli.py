"""Command line: help golden file, exit codes, artifacts, determinism of reruns."""
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from memnav import __version__, cli
from memnav.config import load_config
from memnav.neural import checkpoint
from memnav.sensor import ScanDataset
from memnav.world import World

DATA = Path(__file__).parent / "data"
TINY = str(DATA / "tiny.toml")


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_help_matches_golden_file():
    assert cli.help_text() == (DATA / "cli_help.txt").read_text()


def test_help_lists_every_flag():
    text = cli.help_text()
    parser = cli.build_parser()
    subs = parser._subparsers._group_actions[0].choices
    for p in [parser, *subs.values()]:
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text
    assert set(subs) == set(cli.COMMANDS)


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "memnav.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "bench-latents" in out.stdout


@pytest.mark.parametrize("argv", [["bogus"], ["gen-world", "--bad"], [], ["eval", "--trials", "x"],
                                  ["pipeline", "--variant", "nope"]])
def test_usage_errors_exit_1(argv, capsys):
    assert run(*argv) == 1
    assert "usage" in capsys.readouterr().err


def test_help_and_version_exit_0(capsys):
    assert run("--help") == 0
    assert run("--version") == 0
    assert __version__ in capsys.readouterr().out


def test_gen_world_spacing(tmp_path):
    assert run("--out", tmp_path, "gen-world", "--poisson-radius", 12, "--seed", 3) == 0
    world = World.load(tmp_path / "world.json")
    c = world.centers
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)[np.triu_indices(len(c), 1)]
    assert len(c) > 1 and d.min() >= 12.0
    assert world.meta["config_hash"] == load_config(None, seed=3).hash()
    assert world.meta["version"] == __version__


def test_gen_world_globals_on_either_side(tmp_path):
    assert run("--seed", 4, "gen-world", "--out", tmp_path, "--name", "a.json") == 0
    assert run("gen-world", "--seed", 4, "--out", tmp_path, "--name", "b.json") == 0
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_validation_errors_exit_1(tmp_path, capsys):
    assert run("--out", tmp_path, "gen-world", "--poisson-radius", 1.0) == 1
    assert run("--out", tmp_path, "train-memory") == 1
    assert run("--config", tmp_path / "missing.toml", "gen-world") == 1
    assert "error" in capsys.readouterr().err


def test_runtime_errors_exit_2(tmp_path, monkeypatch):
    from memnav.errors import GenerationError

    def boom(args, cfg):
        raise GenerationError("no room")

    monkeypatch.setitem(cli.COMMANDS, "gen-world", boom)
    assert run("--out", tmp_path, "gen-world") == 2


# ---------------------------------------------------------------------------
# end-to-end on the tiny configuration


@pytest.fixture(scope="module")
def tiny_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert run("pipeline", "--config", TINY, "--seed", 7, "--out", out, "--quiet") == 0
    return out


def test_pipeline_rerun_byte_identical(tiny_out, tmp_path):
    assert run("pipeline", "--config", TINY, "--seed", 7, "--out", tmp_path, "--quiet") == 0
    for rel in ("warmup/metrics.jsonl", "ppo/metrics.jsonl", "vae_curve.jsonl", "memory_curve.jsonl",
                "manifest.json", "actor.ckpt", "vae.ckpt", "memory.ckpt", "dataset.bin"):
        assert (tmp_path / rel).read_bytes() == (tiny_out / rel).read_bytes(), rel


def test_stage_subcommands_rerun_in_place(tiny_out):
    before = (tiny_out / "vae.ckpt").read_bytes()
    assert run("train-vae", "--config", TINY, "--seed", 7, "--out", tiny_out, "--quiet") == 0
    assert (tiny_out / "vae.ckpt").read_bytes() == before


def test_eval_writes_report(tiny_out):
    assert run("eval", "--config", TINY, "--seed", 7, "--out", tiny_out, "--n-maps", 2, "--trials", 2,
               "--quiet") == 0
    rep = json.loads((tiny_out / "eval/report.json").read_text())
    assert rep["rows"][0]["trials"] == 4
    assert (tiny_out / "eval/report_trials.csv").exists()


def test_eval_refuses_mismatched_bundle(tiny_out, tmp_path):
    from memnav.latent import VaeConfig, VaeModel
    from memnav.pipeline import save_vae
    save_vae(tmp_path / "vae.ckpt", VaeModel(VaeConfig(n_e=4)))
    assert run("eval", "--out", tiny_out, "--vae", tmp_path / "vae.ckpt", "--quiet") == 1


def test_bench_latents_structure(tiny_out):
    assert run("bench-latents", "--config", TINY, "--seed", 7, "--out", tiny_out, "--configs", "cur,cur+past20",
               "--seeds", 3, "--quiet") == 0
    rep = json.loads((tiny_out / "latents/report.json").read_text())
    assert [r["config"] for r in rep["rows"]] == ["cur", "cur+past20"]
    assert len(rep["p_values"]) == 1
    assert all(r["n_seeds"] == 3 for r in rep["rows"])


def test_bench_speed_and_plot_data(tiny_out):
    assert run("bench-speed", "--config", TINY, "--seed", 7, "--out", tiny_out, "--quiet") == 0
    rep = json.loads((tiny_out / "speed/report.json").read_text())
    assert [r["config"] for r in rep["rows"]] == ["varying", "fixed@2.5"]
    assert run("plot-data", "--config", TINY, "--seed", 7, "--out", tiny_out, "--quiet") == 0
    files = json.loads((tiny_out / "plots/manifest.json").read_text())["files"]
    assert {"success_vs_iteration.csv", "pareto_points.csv", "speed_vs_density.csv"} <= set(files)


def test_plot_data_needs_runs(tmp_path):
    assert run("plot-data", "--out", tmp_path, "--quiet") == 1


def test_every_artifact_embeds_hash_and_version(tiny_out):
    # runs after the bench tests in file order, so their outputs are covered too
    want = load_config(TINY, seed=7).hash()
    checked = 0
    for path in tiny_out.rglob("*"):
        if path.suffix == ".ckpt":
            meta = checkpoint.load(path)[1]
        elif path.suffix == ".bin":
            meta = ScanDataset.load(path).meta
        elif path.suffix == ".jsonl":
            meta = json.loads(path.read_text().splitlines()[0])["header"]
        elif path.name == "manifest.json":
            meta = json.loads(path.read_text())
        elif path.suffix == ".json":
            doc = json.loads(path.read_text())
            meta = doc.get("meta", doc)
        else:
            continue
        assert meta.get("config_hash") == want, path
        assert meta.get("version") == __version__, path
        checked += 1
    assert checked > 10
