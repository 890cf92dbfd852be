"""``memnav`` command line.

Exit codes: 0 success, 1 usage or validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from memnav import __version__, bench
from memnav.config import RunConfig, artifact_meta, derive_seed, load_config
from memnav.errors import (ConfigError, ContractError, FormatError, MemnavError, ShapeError,
                           StageDependencyError)
from memnav.memory import LATENT_VARIANTS
from memnav.pipeline import FILES, STAGES, load_bundle, read_jsonl, run_pipeline
from memnav.policy.env import make_pool
from memnav.world import World, empty_world, generate_world

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
HELP_WIDTH = 100
_VALIDATION = (ConfigError, ContractError, FormatError, ShapeError, StageDependencyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=32)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # subcommands re-declare the globals so they may appear on either side of the subcommand;
    # SUPPRESS keeps a subcommand default from clobbering a value given before it
    p = argparse.ArgumentParser(add_help=False)
    kw = {} if defaults else {"default": argparse.SUPPRESS}
    p.add_argument("--config", metavar="PATH", help="TOML run configuration", **kw)
    p.add_argument("--seed", type=int, metavar="N", help="master seed (overrides the config)", **kw)
    p.add_argument("--out", metavar="DIR", help="output directory (default: runs)", **kw)
    p.add_argument("--quiet", action="store_true", help="no progress messages on stderr", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memnav", description="Memory-augmented latent navigation: train, evaluate, benchmark.",
                     parents=[_global_flags(True)], formatter_class=_formatter)
    parser.add_argument("--version", action="version", version=f"memnav {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    g = [_global_flags(False)]

    def add(name, help_):
        return sub.add_parser(name, help=help_, description=help_, parents=g, formatter_class=_formatter)

    p = add("gen-world", "generate a cylinder world and write it as JSON")
    p.add_argument("--poisson-radius", type=float, metavar="M", help="minimum obstacle spacing in meters")
    p.add_argument("--obstacle-radius", type=_float_list, metavar="LO,HI", help="obstacle radius range in meters")
    p.add_argument("--empty", action="store_true", help="no obstacles")
    p.add_argument("--name", default="world.json", help="file name inside --out (default: world.json)")

    p = add("collect", "fly the warm-up policy and record a scan dataset")
    p.add_argument("--episodes", type=int, metavar="N", help="episodes to record")

    add("train-vae", "train the scan VAE on the collected dataset")

    p = add("train-memory", "train the LSTM memory on the dataset through the frozen VAE")
    p.add_argument("--variant", choices=sorted(LATENT_VARIANTS), help="latent configuration")

    p = add("train-ppo", "train the policy (final curriculum, or the warm-up stage with --warmup)")
    p.add_argument("--warmup", action="store_true", help="run the obstacle-free warm-up stage instead")

    p = add("pipeline", "run the training stages in order")
    p.add_argument("--stages", type=_csv_list, metavar="LIST", help=f"subset of {','.join(STAGES)}")
    p.add_argument("--variant", choices=sorted(LATENT_VARIANTS), help="latent configuration")

    p = add("eval", "evaluate a (VAE, memory, actor) bundle")
    p.add_argument("--vae", metavar="PATH", help="VAE checkpoint (default: OUT/vae.ckpt)")
    p.add_argument("--memory", metavar="PATH", help="memory checkpoint (default: OUT/memory.ckpt)")
    p.add_argument("--actor", metavar="PATH", help="actor checkpoint (default: OUT/actor.ckpt)")
    p.add_argument("--maps", choices=("empty", "clutter", "crafted"), default="clutter",
                   help="generated map family (default: clutter)")
    p.add_argument("--world", action="append", metavar="PATH", help="world JSON to use instead (repeatable)")
    p.add_argument("--n-maps", type=int, default=8, metavar="N", help="generated maps (default: 8)")
    p.add_argument("--trials", type=int, default=4, metavar="N", help="trials per map (default: 4)")
    p.add_argument("--eval-seeds", type=int, default=1, metavar="N", help="evaluation seeds (default: 1)")

    p = add("bench-latents", "compare latent configurations over seeds")
    p.add_argument("--configs", type=_csv_list, metavar="LIST", default=["cur", "cur+past20"],
                   help="comma-separated latent configurations (default: cur,cur+past20)")
    p.add_argument("--seeds", type=int, metavar="N", help="training seeds per configuration")

    p = add("bench-speed", "compare the varying-speed policy with fixed-speed ones")
    p.add_argument("--speeds", type=_float_list, metavar="LIST", help="fixed v_desire values in m/s")
    p.add_argument("--seeds", type=int, metavar="N", help="training seeds per policy")

    add("plot-data", "write plot-ready CSV files from finished runs in --out")
    return parser


def help_text() -> str:
    """Top-level help followed by every subcommand's help."""
    parser = build_parser()
    parts = [parser.format_help()]
    for action in parser._subparsers._group_actions:
        for name, sp in action.choices.items():
            parts.append(sp.format_help())
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# commands


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _say(args):
    if args.quiet:
        return lambda msg: None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def _out(args) -> Path:
    out = Path(args.out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def cmd_gen_world(args, cfg: RunConfig) -> None:
    spec = cfg.world.with_(seed=derive_seed(cfg.seed, "world") % 2**31)
    if args.poisson_radius is not None:
        spec = spec.with_(poisson_radius=args.poisson_radius)
    if args.obstacle_radius is not None:
        if len(args.obstacle_radius) != 2:
            raise ConfigError("--obstacle-radius takes LO,HI")
        spec = spec.with_(obstacle_radius_range=tuple(args.obstacle_radius))
    world = empty_world(spec) if args.empty else generate_world(spec)
    world = World(world.spec, world.centers, world.radii, artifact_meta(cfg))
    path = _out(args) / args.name
    world.save(path)
    _say(args)(f"{path}: {len(world)} obstacles")


def _stage(args, cfg, stages, variant=None) -> None:
    run_pipeline(cfg, stages, _out(args), variant=variant, log=_say(args))


def cmd_collect(args, cfg):
    if args.episodes is not None:
        cfg = replace(cfg, dataset=replace(cfg.dataset, episodes=args.episodes))
    _stage(args, cfg, ["collect"])


def cmd_train_vae(args, cfg):
    _stage(args, cfg, ["vae"])


def cmd_train_memory(args, cfg):
    _stage(args, cfg, ["memory"], args.variant)


def cmd_train_ppo(args, cfg):
    _stage(args, cfg, ["warmup" if args.warmup else "ppo"])


def cmd_pipeline(args, cfg):
    _stage(args, cfg, args.stages or list(STAGES), args.variant)


def _eval_maps(args, cfg: RunConfig) -> list[World]:
    if args.world:
        return [World.load(p) for p in args.world]
    seed = derive_seed(cfg.seed, "eval-maps") % 100_000
    if args.maps == "empty":
        return [empty_world(cfg.world.with_(seed=seed + i)) for i in range(args.n_maps)]
    if args.maps == "crafted":
        st = cfg.study
        return bench.crafted_maps(args.n_maps, seed, cfg.world, st.crafted_radius, st.crafted_obstacles)
    return make_pool(cfg.world, cfg.study.clutter_radius, args.n_maps, seed, "eval").worlds


def cmd_eval(args, cfg):
    out = _out(args)
    bundle = load_bundle(args.vae or out / FILES["vae"], args.memory or out / FILES["memory"],
                         args.actor or out / FILES["actor"])
    if min(args.n_maps, args.trials, args.eval_seeds) < 1:
        raise ConfigError("--n-maps, --trials and --eval-seeds must be >= 1")
    maps = _eval_maps(args, cfg)
    seeds = [derive_seed(cfg.seed, "eval", k) % 2**31 for k in range(args.eval_seeds)]
    trials = bench.evaluate(bundle, maps, args.trials, seeds, cfg.env)
    report = bench.BenchmarkReport(
        rows=[{"success_rate": bench.success_rate(trials), "mean_agv": bench.mean_agv(trials),
               **bench.outcome_counts(trials), "trials": len(trials)}],
        agv_by_trav=bench.agv_by_trav(trials), trials=[t.to_dict() for t in trials],
        meta=artifact_meta(cfg, maps=args.maps if not args.world else "files"))
    report.save(out / "eval", "report")
    _say(args)(f"success {report.rows[0]['success_rate']:.3f} over {len(trials)} trials")


def cmd_bench_latents(args, cfg):
    from memnav.studies import latent_study
    unknown = [c for c in args.configs if c not in LATENT_VARIANTS]
    if unknown or not args.configs:
        raise ConfigError(f"unknown latent configurations {unknown}; choose from {sorted(LATENT_VARIANTS)}")
    study = latent_study(cfg, args.configs, args.seeds, _out(args), log=_say(args))
    for row in study.report.rows:
        _say(args)(json.dumps(row, sort_keys=True))


def cmd_bench_speed(args, cfg):
    from memnav.studies import speed_study
    study = speed_study(cfg, args.speeds, args.seeds, _out(args), log=_say(args))
    for row in study.report.rows:
        _say(args)(json.dumps(row, sort_keys=True))
    _say(args)(f"speed-density rho {study.rho:.3f}")


def cmd_plot_data(args, cfg):
    out = _out(args)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    written = []

    def emit(name, rows):
        if rows:
            bench.write_csv(plots / name, rows)
            written.append(name)

    for rel in ("warmup/metrics.jsonl", "ppo/metrics.jsonl"):
        if (out / rel).exists():
            emit(rel.replace("/metrics.jsonl", "_training.csv"), read_jsonl(out / rel))
    lat = out / "latents" / "report.json"
    if lat.exists():
        doc = json.loads(lat.read_text())
        emit("success_vs_iteration.csv", [{"config": c, **row} for c, rows in sorted(doc["curves"].items())
                                          for row in rows])
        emit("latent_table.csv", doc["rows"])
    spd = out / "speed" / "report.json"
    if spd.exists():
        doc = json.loads(spd.read_text())
        emit("pareto_points.csv", doc["rows"])
        emit("agv_vs_trav.csv", doc["agv_by_trav"])
        emit("speed_vs_density.csv", doc["curves"].get("speed_vs_density", []))
    ev = out / "eval" / "report.json"
    if ev.exists():
        emit("eval_agv_vs_trav.csv", json.loads(ev.read_text())["agv_by_trav"])
    if not written:
        raise ConfigError(f"no finished runs found in {out}")
    _write_json(plots / "manifest.json", {**artifact_meta(cfg), "files": written})
    _say(args)(f"wrote {len(written)} files to {plots}")


COMMANDS = {
    "gen-world": cmd_gen_world, "collect": cmd_collect, "train-vae": cmd_train_vae,
    "train-memory": cmd_train_memory, "train-ppo": cmd_train_ppo, "pipeline": cmd_pipeline,
    "eval": cmd_eval, "bench-latents": cmd_bench_latents, "bench-speed": cmd_bench_speed,
    "plot-data": cmd_plot_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("memnav: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except _VALIDATION as exc:
        print(f"memnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MemnavError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"memnav: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
