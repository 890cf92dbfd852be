"""1-D depth scans: ray-cast rendering, stereo-like noise, and the scan dataset file."""
from __future__ import annotations

import csv
import functools
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from memnav import kernels
from memnav.errors import ConfigError, FormatError
from memnav.world import World

SCAN_MAGIC = b"MNSCAN\x00\x01"
SCAN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CameraModel:
    ray_count: int = 64
    fov: float = math.pi / 2
    max_range: float = 20.0
    yaw_offset: float = 0.0

    def __post_init__(self):
        if self.ray_count < 8:
            raise ConfigError("ray_count must be >= 8")
        if not 0 < self.fov < math.pi:
            raise ConfigError("fov must lie in (0, pi)")
        if not self.max_range > 0:
            raise ConfigError("max_range must be positive")

    def ray_angles(self) -> np.ndarray:
        """Body-frame ray headings, index 0 at ``-fov/2`` (right-most)."""
        return _ray_angles(self.ray_count, self.fov, self.yaw_offset).copy()


@dataclass(frozen=True)
class NoiseParams:
    multiplicative_sigma: float = 0.02
    dropout_probability: float = 0.01
    # 0 disables quantisation
    quantization_levels: int = 256

    def __post_init__(self):
        if self.multiplicative_sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if not 0 <= self.dropout_probability <= 1:
            raise ConfigError("dropout_probability must lie in [0, 1]")
        if self.quantization_levels == 1 or self.quantization_levels < 0:
            raise ConfigError("quantization_levels must be 0 (off) or >= 2")


@dataclass(frozen=True)
class DepthScan:
    values: np.ndarray
    timestamp_index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or np.any(v < 0) or np.any(v > 1):
            raise ConfigError("scan values must be a 1-D array within [0, 1]")
        object.__setattr__(self, "values", v)


def render_batch(world: World, positions: np.ndarray, yaws: np.ndarray, camera: CameraModel) -> np.ndarray:
    """Normalised depth for ``(n, 3)`` poses; returns ``(n, ray_count)``."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    yaws = np.asarray(yaws, dtype=np.float64).reshape(-1)
    n = len(yaws)
    ang = (yaws[:, None] + camera.ray_angles()[None, :]).reshape(-1)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    origins = np.repeat(positions[:, :2], camera.ray_count, axis=0)
    d = kernels.raycast(origins, dirs, world.centers, world.radii, inflate=0.0,
                        lo=world.lo, hi=world.hi, max_dist=camera.max_range)
    return (np.minimum(d, camera.max_range) / camera.max_range).reshape(n, camera.ray_count)


def render_depth(world: World, pose, camera: CameraModel | None = None, timestamp_index: int = 0) -> DepthScan:
    """Render one scan from ``pose = (position, yaw)``."""
    camera = camera or CameraModel()
    position, yaw = pose
    vals = render_batch(world, np.asarray(position)[None, :], np.array([yaw]), camera)[0]
    return DepthScan(vals, timestamp_index)


@functools.lru_cache(maxsize=32)
def _ray_angles(ray_count: int, fov: float, yaw_offset: float) -> np.ndarray:
    return yaw_offset + np.linspace(-fov / 2, fov / 2, ray_count)


def noise_draws(shape, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """The two uniform streams consumed by :func:`noise_array`, in draw order."""
    return rng.standard_normal(shape), rng.random(shape)


def noise_array(values: np.ndarray, params: NoiseParams, rng: np.random.Generator) -> np.ndarray:
    """Array form of :func:`apply_depth_noise`, drawing from ``rng``."""
    v = np.asarray(values, dtype=np.float64)
    return apply_noise_draws(v, params, *noise_draws(v.shape, rng))


def apply_noise_draws(v: np.ndarray, params: NoiseParams, eps: np.ndarray, uni: np.ndarray) -> np.ndarray:
    drop = uni < params.dropout_probability
    out = v * (1.0 + params.multiplicative_sigma * eps)
    out = np.where(drop, 1.0, out)
    out = np.clip(out, 0.0, 1.0)
    if params.quantization_levels:
        q = params.quantization_levels - 1
        out = np.round(out * q) / q
    return out


def apply_depth_noise(scan: DepthScan, params: NoiseParams, rng_seed: int) -> DepthScan:
    rng = np.random.default_rng(rng_seed)
    return DepthScan(noise_array(scan.values, params, rng), scan.timestamp_index)


# --------------------------------------------------------------------------
# scan dataset file
#
# header: magic(8) | version u16 | ray_count u32 | frame_period f64 | n_episodes u32 | meta_len u32
# then meta JSON, n_episodes + 1 u64 frame offsets, frames as little-endian float32.

_HEADER = struct.Struct("<8sHIdII")


@dataclass
class ScanDataset:
    """Episode-segmented scan sequences."""

    episodes: list[np.ndarray]
    frame_period: float = 0.1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        # frames are held at the on-disk float32 precision so save/load is lossless
        self.episodes = [np.asarray(e, dtype=np.float32).astype(np.float64) for e in self.episodes]
        widths = {e.shape[1] for e in self.episodes if e.size}
        if len(widths) > 1:
            raise FormatError(f"episodes disagree on ray_count: {sorted(widths)}")

    @property
    def ray_count(self) -> int:
        for e in self.episodes:
            if e.ndim == 2:
                return e.shape[1]
        return 0

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def n_frames(self) -> int:
        return sum(len(e) for e in self.episodes)

    def frames(self) -> np.ndarray:
        if not self.episodes:
            return np.zeros((0, 0))
        return np.concatenate(self.episodes, axis=0)

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(e) for e in self.episodes])]).astype(np.uint64)

    def save(self, path) -> None:
        frames = self.frames().astype("<f4")
        meta = json.dumps(self.meta, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(SCAN_MAGIC, SCAN_FORMAT_VERSION, self.ray_count,
                                  float(self.frame_period), len(self.episodes), len(meta)))
            fh.write(meta)
            fh.write(self.offsets().astype("<u8").tobytes())
            fh.write(frames.tobytes())

    @classmethod
    def load(cls, path) -> "ScanDataset":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise FormatError("truncated scan dataset header")
        magic, version, rays, period, n_ep, meta_len = _HEADER.unpack_from(raw, 0)
        if magic != SCAN_MAGIC:
            raise FormatError("bad magic; not a scan dataset")
        if version != SCAN_FORMAT_VERSION:
            raise FormatError(f"unsupported scan dataset version {version}")
        pos = _HEADER.size
        try:
            meta = json.loads(raw[pos:pos + meta_len].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("corrupt scan dataset metadata") from exc
        pos += meta_len
        offsets = np.frombuffer(raw, dtype="<u8", count=n_ep + 1, offset=pos).astype(np.int64)
        pos += 8 * (n_ep + 1)
        total = int(offsets[-1]) if n_ep else 0
        if len(raw) - pos != 4 * total * rays:
            raise FormatError("scan payload size does not match header")
        frames = np.frombuffer(raw, dtype="<f4", offset=pos).reshape(total, rays).astype(np.float64)
        eps = [frames[offsets[i]:offsets[i + 1]] for i in range(n_ep)]
        return cls(eps, period, meta)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "frame"] + [f"r{i}" for i in range(self.ray_count)])
            for e, ep in enumerate(self.episodes):
                for f, row in enumerate(ep):
                    w.writerow([e, f] + [f"{float(np.float32(x)):.9g}" for x in row])
