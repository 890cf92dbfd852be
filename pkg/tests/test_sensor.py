import math

import numpy as np
import pytest

from memnav.errors import FormatError
from memnav.sensor import (CameraModel, DepthScan, NoiseParams, ScanDataset, apply_depth_noise,
                           render_depth)
from memnav.world import WorldSpec, empty_world, generate_world, world_from_obstacles

BIG = WorldSpec(bounds_min=(-100.0, -100.0, 0.0), bounds_max=(100.0, 100.0, 6.0))


def brute_force_depth(world, position, yaw, camera):
    """Per-ray quadratic solve over every obstacle and every wall, written out longhand."""
    out = []
    for k in range(camera.ray_count):
        th = yaw + camera.yaw_offset - camera.fov / 2 + k * camera.fov / (camera.ray_count - 1)
        ux, uy = math.cos(th), math.sin(th)
        hits = [camera.max_range]
        for (cx, cy), r in world.obstacles:
            # |o + t u - c|^2 = r^2  ->  t^2 + 2 t (u.(o-c)) + |o-c|^2 - r^2 = 0
            b = ux * (position[0] - cx) + uy * (position[1] - cy)
            c = (position[0] - cx) ** 2 + (position[1] - cy) ** 2 - r * r
            disc = b * b - c
            if disc >= 0:
                for t in (-b - math.sqrt(disc), -b + math.sqrt(disc)):
                    if t >= 0:
                        hits.append(t)
                        break
        for axis, u in ((0, ux), (1, uy)):
            if u > 0:
                hits.append((world.spec.bounds_max[axis] - position[axis]) / u)
            elif u < 0:
                hits.append((world.spec.bounds_min[axis] - position[axis]) / u)
        out.append(min(hits) / camera.max_range)
    return np.array(out)


def test_empty_world_reads_all_ones():
    scan = render_depth(empty_world(BIG), ((0.0, 0.0, 3.0), 0.3))
    assert np.all(scan.values == 1.0)


def test_obstacle_dead_ahead():
    cam = CameraModel(ray_count=65)
    d, r = 7.0, 1.25
    w = world_from_obstacles(BIG, [[d, 0.0]], [r])
    scan = render_depth(w, ((0.0, 0.0, 3.0), 0.0), cam)
    assert scan.values[32] == pytest.approx((d - r) / cam.max_range, rel=1e-12)


def test_obstacle_behind_is_invisible():
    w = world_from_obstacles(BIG, [[-5.0, 0.0]], [1.0])
    scan = render_depth(w, ((0.0, 0.0, 3.0), 0.0))
    assert np.all(scan.values == 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_render_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    w = generate_world(WorldSpec(poisson_radius=3.5, seed=seed))
    cam = CameraModel(ray_count=64, max_range=20.0)
    for _ in range(10):
        pos = np.array([rng.uniform(2, 38), rng.uniform(2, 38), 3.0])
        if any(np.hypot(*(pos[:2] - c)) < r for c, r in zip(w.centers, w.radii)):
            continue
        yaw = rng.uniform(-math.pi, math.pi)
        got = render_depth(w, (pos, yaw), cam).values
        want = brute_force_depth(w, pos, yaw, cam)
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_noise_identity():
    v = np.linspace(0, 1, 64)
    out = apply_depth_noise(DepthScan(v), NoiseParams(0.0, 0.0, 0), 3)
    np.testing.assert_array_equal(out.values, v)


def test_full_dropout_on_ones():
    out = apply_depth_noise(DepthScan(np.ones(64)), NoiseParams(0.05, 1.0, 256), 3)
    np.testing.assert_array_equal(out.values, np.ones(64))


def test_noise_std_matches_sigma():
    sigma = 0.02
    base = np.full(16, 0.5)
    draws = np.array([apply_depth_noise(DepthScan(base), NoiseParams(sigma, 0.0, 0), s).values
                      for s in range(10_000)])
    rel_std = (draws / base - 1.0).std(axis=0)
    assert np.all(np.abs(rel_std - sigma) < 0.1 * sigma)


def test_noise_in_range_and_deterministic():
    rng = np.random.default_rng(0)
    scan = DepthScan(rng.random(64))
    p = NoiseParams(0.5, 0.2, 16)
    a, b = apply_depth_noise(scan, p, 11), apply_depth_noise(scan, p, 11)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.min() >= 0 and a.values.max() <= 1


def test_dataset_binary_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    ds = ScanDataset([rng.random((5, 64)), rng.random((0, 64)), rng.random((9, 64))], 0.1)
    path = tmp_path / "scans.bin"
    ds.save(path)
    back = ScanDataset.load(path)
    assert len(back) == 3 and back.frame_period == 0.1
    for a, b in zip(ds.episodes, back.episodes):
        np.testing.assert_array_equal(a.astype(np.float32), b)
    back.save(tmp_path / "again.bin")
    assert path.read_bytes() == (tmp_path / "again.bin").read_bytes()
    ds.to_csv(tmp_path / "scans.csv")
    rows = (tmp_path / "scans.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 14


def test_dataset_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"not a dataset at all")
    with pytest.raises(FormatError):
        ScanDataset.load(p)
