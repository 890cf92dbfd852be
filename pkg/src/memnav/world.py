"""Procedural cylinder worlds: Poisson-disk layout, collisions, traversability."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from memnav import kernels
from memnav.errors import ConfigError, FormatError, GenerationError

WORLD_FORMAT_VERSION = 1
TRAV_MIN = 3.0
TRAV_MAX = 13.0
POISSON_ATTEMPTS = 30


@dataclass(frozen=True)
class WorldSpec:
    bounds_min: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds_max: tuple[float, float, float] = (40.0, 40.0, 6.0)
    poisson_radius: float = 12.0
    obstacle_radius_range: tuple[float, float] = (0.5, 1.5)
    drone_radius: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bounds_min", tuple(float(v) for v in self.bounds_min))
        object.__setattr__(self, "bounds_max", tuple(float(v) for v in self.bounds_max))
        object.__setattr__(self, "obstacle_radius_range",
                           tuple(float(v) for v in self.obstacle_radius_range))
        self.validate()

    def validate(self) -> None:
        if len(self.bounds_min) != 3 or len(self.bounds_max) != 3:
            raise ConfigError("bounds must be 3-vectors")
        if not all(a < b for a, b in zip(self.bounds_min, self.bounds_max)):
            raise ConfigError(f"inverted bounds {self.bounds_min} / {self.bounds_max}")
        if not self.poisson_radius > 0:
            raise ConfigError(f"poisson_radius must be positive, got {self.poisson_radius}")
        lo, hi = self.obstacle_radius_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad obstacle_radius_range {self.obstacle_radius_range}")
        if hi > self.poisson_radius / 2:
            raise ConfigError("obstacle radii must not exceed poisson_radius / 2")
        if self.drone_radius < 0:
            raise ConfigError("drone_radius must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")

    def with_(self, **kw) -> "WorldSpec":
        d = asdict(self)
        d.update(kw)
        return WorldSpec(**d)


@dataclass(frozen=True)
class World:
    spec: WorldSpec
    centers: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def obstacles(self) -> list[tuple[tuple[float, float], float]]:
        return [((float(c[0]), float(c[1])), float(r)) for c, r in zip(self.centers, self.radii)]

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.spec.bounds_min)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.spec.bounds_max)

    def __len__(self) -> int:
        return len(self.radii)

    def to_json(self) -> str:
        doc = {
            "format": "memnav-world",
            "version": WORLD_FORMAT_VERSION,
            "units": "meters",
            "spec": asdict(self.spec),
            "obstacles": [{"center": [float(c[0]), float(c[1])], "radius": float(r)}
                          for c, r in zip(self.centers, self.radii)],
        }
        if self.meta:
            doc["meta"] = self.meta
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "World":
        doc = json.loads(text)
        if doc.get("format") != "memnav-world" or doc.get("version") != WORLD_FORMAT_VERSION:
            raise FormatError("not a memnav world document (or unsupported version)")
        spec = WorldSpec(**doc["spec"])
        obs = doc["obstacles"]
        centers = np.array([o["center"] for o in obs], dtype=np.float64).reshape(-1, 2)
        radii = np.array([o["radius"] for o in obs], dtype=np.float64)
        return cls(spec, centers, radii, doc.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "World":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class TraversabilityReport:
    trav: float
    raw_mean_free_path: float
    sample_count: int


def poisson_disk(lo, hi, radius: float, rng: np.random.Generator, k: int = POISSON_ATTEMPTS) -> np.ndarray:
    """Bridson dart throwing in the rectangle ``[lo, hi]``; returns ``(n, 2)`` points."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    size = hi - lo
    cell = radius / math.sqrt(2.0)
    gw, gh = int(math.ceil(size[0] / cell)), int(math.ceil(size[1] / cell))
    grid = -np.ones((gw, gh), dtype=np.int64)
    r2 = radius * radius

    def cell_of(p):
        return (min(int((p[0] - lo[0]) / cell), gw - 1), min(int((p[1] - lo[1]) / cell), gh - 1))

    points = [lo + rng.random(2) * size]
    grid[cell_of(points[0])] = 0
    active = [0]
    while active:
        idx = int(rng.integers(len(active)))
        base = points[active[idx]]
        placed = False
        for _ in range(k):
            ang = rng.random() * 2.0 * math.pi
            dist = radius * (1.0 + rng.random())
            cand = base + dist * np.array([math.cos(ang), math.sin(ang)])
            if np.any(cand < lo) or np.any(cand >= hi):
                continue
            cx, cy = cell_of(cand)
            ok = True
            for i in range(max(cx - 2, 0), min(cx + 3, gw)):
                for j in range(max(cy - 2, 0), min(cy + 3, gh)):
                    q = grid[i, j]
                    if q >= 0:
                        d = points[q] - cand
                        if d[0] * d[0] + d[1] * d[1] < r2:
                            ok = False
                            break
                if not ok:
                    break
            if ok:
                grid[cx, cy] = len(points)
                active.append(len(points))
                points.append(cand)
                placed = True
                break
        if not placed:
            active[idx] = active[-1]
            active.pop()
    return np.array(points)


def generate_world(spec: WorldSpec) -> World:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lo, hi = np.asarray(spec.bounds_min[:2]), np.asarray(spec.bounds_max[:2])
    centers = poisson_disk(lo, hi, spec.poisson_radius, rng)
    rlo, rhi = spec.obstacle_radius_range
    radii = rlo + (rhi - rlo) * rng.random(len(centers))
    return World(spec, centers, radii)


def empty_world(spec: WorldSpec | None = None) -> World:
    spec = spec or WorldSpec()
    return World(spec, np.zeros((0, 2)), np.zeros(0))


def world_from_obstacles(spec: WorldSpec, centers, radii) -> World:
    """Hand-placed obstacles; spacing is not checked against ``poisson_radius``."""
    return World(spec, np.asarray(centers, dtype=np.float64).reshape(-1, 2),
                 np.asarray(radii, dtype=np.float64).reshape(-1))


def collision_check(world: World, position, drone_radius: float | None = None) -> bool:
    dr = world.spec.drone_radius if drone_radius is None else drone_radius
    return bool(collision_mask(world, np.asarray(position, dtype=np.float64)[None, :], dr)[0])


def collision_mask(world: World, positions: np.ndarray, drone_radius: float) -> np.ndarray:
    """Vectorised :func:`collision_check` over ``(n, 3)`` positions."""
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    lo = world.lo + drone_radius
    hi = world.hi - drone_radius
    hit = np.any((p < lo) | (p > hi), axis=1)
    if len(world.radii):
        d2 = ((p[:, None, :2] - world.centers[None, :, :]) ** 2).sum(-1)
        lim = world.radii[None, :] + drone_radius
        hit |= np.any(d2 < lim * lim, axis=1)
    return hit


def _free_origins(world: World, n: int, rng: np.random.Generator, inflate: float) -> np.ndarray:
    lo, hi = world.lo[:2], world.hi[:2]
    out = np.empty((0, 2))
    for _ in range(1000):
        cand = lo + rng.random((max(n, 16), 2)) * (hi - lo)
        if len(world.radii):
            d2 = ((cand[:, None, :] - world.centers[None]) ** 2).sum(-1)
            lim = world.radii[None, :] + inflate
            cand = cand[~np.any(d2 <= lim * lim, axis=1)]
        out = np.concatenate([out, cand])
        if len(out) >= n:
            return out[:n]
    raise GenerationError("could not find free space for traversability rays")


def traversability(world: World, n_samples: int = 512, rng_seed: int = 0) -> TraversabilityReport:
    """Clipped mean free path of drone-inflated random rays.

    Origins are uniform over obstacle-free space, headings uniform. Walls do not
    stop rays; each free path is capped at the box diagonal.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    inflate = world.spec.drone_radius
    origins = _free_origins(world, n_samples, rng, inflate)
    ang = rng.random(n_samples) * 2.0 * math.pi
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    diag = float(np.linalg.norm(world.hi[:2] - world.lo[:2]))
    dist = kernels.raycast(origins, dirs, world.centers, world.radii, inflate=inflate, max_dist=diag)
    raw = float(dist.mean())
    return TraversabilityReport(float(np.clip(raw, TRAV_MIN, TRAV_MAX)), raw, n_samples)


def sample_start_goal(world: World, min_separation: float, rng_seed: int = 0,
                      z_range: tuple[float, float] | None = None, max_tries: int = 2000):
    """Draw a collision-free start and goal at least ``min_separation`` apart horizontally."""
    extent = float(np.linalg.norm(world.hi[:2] - world.lo[:2]))
    if min_separation >= extent:
        raise ConfigError("min_separation exceeds the world extent")
    rng = np.random.default_rng(rng_seed)
    return _sample_start_goal(world, min_separation, rng, z_range, max_tries)


def _sample_start_goal(world, min_separation, rng, z_range=None, max_tries=2000):
    dr = world.spec.drone_radius
    margin = max(1.0, 2 * dr)
    lo = world.lo + margin
    hi = world.hi - margin
    if z_range is not None:
        lo[2], hi[2] = z_range
    if np.any(lo >= hi):
        raise GenerationError("bounds too small for the drone")
    clear = dr + 0.5
    for _ in range(max_tries):
        pts = lo + rng.random((2, 3)) * (hi - lo)
        if np.linalg.norm(pts[0, :2] - pts[1, :2]) < min_separation:
            continue
        if collision_mask(world, pts, clear).any():
            continue
        return pts[0].copy(), pts[1].copy()
    raise GenerationError(f"no valid start/goal pair after {max_tries} draws")
