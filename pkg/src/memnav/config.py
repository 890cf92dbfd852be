"""Run configuration: one TOML file, MEMNAV_* overrides, a stable hash, named seed streams."""
from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from memnav import __version__
from memnav.dynamics import ActionLimits
from memnav.errors import ConfigError
from memnav.latent import VaeConfig
from memnav.memory import LATENT_VARIANTS, MemoryConfig
from memnav.policy.env import EnvConfig
from memnav.policy.ppo import PpoConfig
from memnav.policy.train import CurriculumStage
from memnav.reward import RewardWeights, TerminalConstants
from memnav.sensor import CameraModel, NoiseParams
from memnav.world import WorldSpec

ENV_PREFIX = "MEMNAV_"


WARMUP_STAGE = CurriculumStage("empty", None, 150, n_worlds=4)
DEFAULT_CURRICULUM = (
    CurriculumStage("warmup", 12.0, 100),
    CurriculumStage("clutter", (3.0, 5.4), 500, n_worlds=32),
)


@dataclass(frozen=True)
class DatasetConfig:
    episodes: int = 200
    horizon: int = 300
    poisson_radius: tuple[float, float] = (3.0, 12.0)
    n_worlds: int = 32

    def __post_init__(self):
        object.__setattr__(self, "poisson_radius", tuple(float(v) for v in self.poisson_radius))
        if len(self.poisson_radius) != 2 or not 0 < self.poisson_radius[0] <= self.poisson_radius[1]:
            raise ConfigError(f"bad dataset radius range {self.poisson_radius}")
        if min(self.episodes, self.horizon, self.n_worlds) < 1:
            raise ConfigError("dataset counts must be positive")


@dataclass(frozen=True)
class StudyConfig:
    """Budgets for the multi-seed latent and speed comparisons."""

    seeds: int = 10
    speed_seeds: int = 5
    warmup_iterations: int = 20
    iterations: int = 100
    n_worlds: int = 16
    eval_maps: int = 8
    trials_per_map: int = 4
    crafted_radius: float = 10.0
    crafted_obstacles: tuple[float, float] = (2.5, 4.5)
    clutter_radius: tuple[float, float] = (3.0, 5.4)
    speeds: tuple[float, ...] = (1.5, 2.5, 3.5)
    n_perm: int = 10_000

    def __post_init__(self):
        for name in ("crafted_obstacles", "clutter_radius", "speeds"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if min(self.seeds, self.speed_seeds, self.iterations, self.n_worlds, self.eval_maps,
               self.trials_per_map, self.n_perm) < 1 or self.warmup_iterations < 0:
            raise ConfigError("study budgets must be positive")
        if any(v < 0 for v in self.speeds):
            raise ConfigError("speeds must be non-negative")

    def _stages(self, last: CurriculumStage) -> tuple[CurriculumStage, ...]:
        warm = (CurriculumStage("warmup", 12.0, self.warmup_iterations),) if self.warmup_iterations else ()
        return warm + (last,)

    def latent_curriculum(self) -> tuple[CurriculumStage, ...]:
        return self._stages(CurriculumStage("large", self.crafted_radius, self.iterations, self.n_worlds,
                                            self.crafted_obstacles))

    def speed_curriculum(self) -> tuple[CurriculumStage, ...]:
        return self._stages(CurriculumStage("clutter", self.clutter_radius, self.iterations, self.n_worlds))


@dataclass(frozen=True)
class RunConfig:
    world: WorldSpec = WorldSpec()
    camera: CameraModel = CameraModel()
    noise: NoiseParams = NoiseParams()
    reward: RewardWeights = RewardWeights()
    terminal: TerminalConstants = TerminalConstants()
    limits: ActionLimits = ActionLimits()
    max_steps: int = 600
    min_separation: float = 12.0
    vae: VaeConfig = VaeConfig()
    memory: MemoryConfig = MemoryConfig()
    latent_variant: str = "cur+past20"
    ppo: PpoConfig = PpoConfig()
    warmup: CurriculumStage = WARMUP_STAGE
    dataset: DatasetConfig = DatasetConfig()
    curriculum: tuple[CurriculumStage, ...] = DEFAULT_CURRICULUM
    study: StudyConfig = StudyConfig()
    seed: int = 0

    def __post_init__(self):
        if self.latent_variant not in LATENT_VARIANTS:
            raise ConfigError(f"unknown latent variant {self.latent_variant!r}")
        if self.camera.ray_count != self.vae.ray_count:
            raise ConfigError("camera.ray_count must equal vae.ray_count")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(camera=self.camera, noise=self.noise, weights=self.reward,
                         terminal=self.terminal, limits=self.limits, max_steps=self.max_steps,
                         min_separation=self.min_separation)

    def memory_config(self, variant: str | None = None) -> MemoryConfig:
        flags, mult = LATENT_VARIANTS[variant or self.latent_variant]
        return replace(self.memory, flags=flags, multiplier=mult)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        return config_hash(self)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(canonical_json(config.to_dict()).encode()).hexdigest()[:16]


def artifact_meta(config: RunConfig, **extra) -> dict:
    """Header embedded in every artifact written by the tool."""
    meta = {"config_hash": config.hash(), "version": __version__, "seed": config.seed}
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# seeds


def seed_stream(master: int, name: str, *extra: int) -> np.random.SeedSequence:
    """Named, reproducible sub-stream of ``master`` (e.g. ``world``, ``noise``, ``policy``, ``eval``)."""
    return np.random.SeedSequence([int(master), zlib.crc32(name.encode()), *map(int, extra)])


def derive_seed(master: int, name: str, *extra: int) -> int:
    return int(seed_stream(master, name, *extra).generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# loading


_SECTIONS = {
    "world": WorldSpec, "camera": CameraModel, "noise": NoiseParams, "reward": RewardWeights,
    "terminal": TerminalConstants, "limits": ActionLimits, "vae": VaeConfig, "memory": MemoryConfig,
    "ppo": PpoConfig, "dataset": DatasetConfig, "study": StudyConfig,
}
_SCALARS = ("max_steps", "min_separation", "latent_variant", "seed")


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    kw = {}
    for name, cls in _SECTIONS.items():
        if name in doc:
            section = doc.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"[{name}] must be a table")
            kw[name] = _build(cls, section, name)
    if "warmup" in doc:
        kw["warmup"] = _build(CurriculumStage, {"name": "empty", "poisson_radius": None, **doc.pop("warmup")},
                              "warmup")
    if "curriculum" in doc:
        stages = doc.pop("curriculum")
        if not isinstance(stages, list) or not stages:
            raise ConfigError("curriculum must be a non-empty array of tables")
        kw["curriculum"] = tuple(_build(CurriculumStage, s, "curriculum") for s in stages)
    for key in _SCALARS:
        if key in doc:
            kw[key] = doc.pop(key)
    if doc:
        raise ConfigError(f"unknown top-level keys: {sorted(doc)}")
    return RunConfig(**kw)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_env_overrides(doc: dict, environ=None) -> dict:
    """``MEMNAV_SECTION__KEY=value`` (or ``MEMNAV_KEY`` for top-level scalars).

    Values are parsed as JSON when possible, otherwise taken as strings.
    ``MEMNAV_NUMBA`` is a runtime switch, not a config key.
    """
    environ = os.environ if environ is None else environ
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX) or key == "MEMNAV_NUMBA":
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        value = _parse_value(environ[key])
        if len(path) == 1:
            out[path[0]] = value
        elif len(path) == 2:
            out.setdefault(path[0], {})[path[1]] = value
        else:
            raise ConfigError(f"cannot override nested key {key}")
    return out


def load_config(path=None, environ=None, **overrides) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    doc = apply_env_overrides(doc, environ)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return from_dict(doc)


def default_config_path() -> Path:
    return Path(__file__).resolve().parents[2] / "configs" / "default.toml"
