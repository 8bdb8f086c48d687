"""Procedurally generated scenes with known ground, clusters, and boxes.

Scenes mimic a vehicle-mounted sensor: the ground plane sits one sensor
height below the origin, and upright cuboid objects rest on it inside an
annulus of planimetric range. Every scene comes with its true per-point
labels and true boxes, which double as oracles in tests and as held-out
evaluation data for the training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SeededRng
from .types import Box3D, PointCloud, wrap_half_pi

__all__ = [
    "SENSOR_HEIGHT",
    "SyntheticScene",
    "sample_plane_points",
    "sample_box_surface",
    "random_box",
    "make_scene",
    "make_dense_cloud",
]

SENSOR_HEIGHT = 1.8  # ground plane z relative to the sensor origin


@dataclass(frozen=True)
class SyntheticScene:
    """Cloud with true labels plus the true boxes (ids match labels)."""

    cloud: PointCloud
    boxes: tuple[Box3D, ...]


def sample_plane_points(
    rng: SeededRng,
    n: int,
    r_range: tuple[float, float] = (3.0, 20.0),
    z: float = -SENSOR_HEIGHT,
    noise: float = 0.02,
) -> np.ndarray:
    """Ground returns in an annulus, uniform in area."""
    u = rng.random(n)
    r = np.sqrt(u * (r_range[1] ** 2 - r_range[0] ** 2) + r_range[0] ** 2)
    phi = rng.uniform(-math.pi, math.pi, n)
    zs = z + rng.normal(0.0, noise, n) if noise > 0 else np.full(n, z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), zs])


def sample_box_surface(rng: SeededRng, box: Box3D, n: int, noise: float = 0.0) -> np.ndarray:
    """Uniform-by-area samples on all six faces of a box."""
    d = np.array([box.dx, box.dy, box.dz])
    areas = np.array([d[1] * d[2], d[1] * d[2], d[0] * d[2], d[0] * d[2], d[0] * d[1], d[0] * d[1]])
    cum = np.cumsum(areas / areas.sum())
    face = np.searchsorted(cum, rng.random(n), side="right").clip(0, 5)
    u = rng.uniform(-0.5, 0.5, n)
    v = rng.uniform(-0.5, 0.5, n)
    local = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    for a in range(3):
        m = axis == a
        others = [i for i in range(3) if i != a]
        local[m, a] = sign[m] * d[a]
        local[m, others[0]] = u[m] * d[others[0]]
        local[m, others[1]] = v[m] * d[others[1]]
    if noise > 0:
        local += rng.normal(0.0, noise, (n, 3))
    c, s = math.cos(box.heading), math.sin(box.heading)
    x = local[:, 0] * c - local[:, 1] * s + box.cx
    y = local[:, 0] * s + local[:, 1] * c + box.cy
    z = local[:, 2] + box.cz
    return np.column_stack([x, y, z])


def random_box(
    rng: SeededRng,
    cluster_id: int,
    r_range: tuple[float, float] = (8.0, 18.0),
    size_xy: tuple[float, float] = (1.0, 4.0),
    size_z: tuple[float, float] = (1.0, 2.5),
    ground_z: float = -SENSOR_HEIGHT,
) -> Box3D:
    """Upright box resting on the ground at a random annulus position."""
    r = float(rng.uniform(*r_range))
    phi = float(rng.uniform(-math.pi, math.pi))
    dx = float(rng.uniform(*size_xy))
    dy = float(rng.uniform(*size_xy))
    dz = float(rng.uniform(*size_z))
    if dy > dx:
        dx, dy = dy, dx
    heading = float(wrap_half_pi(rng.uniform(-math.pi / 2, math.pi / 2)))
    return Box3D(
        cx=r * math.cos(phi),
        cy=r * math.sin(phi),
        cz=ground_z + dz / 2,
        dx=dx,
        dy=dy,
        dz=dz,
        heading=heading,
        cluster_id=cluster_id,
    )


def surface_area(box: Box3D) -> float:
    return 2.0 * (box.dx * box.dy + box.dx * box.dz + box.dy * box.dz)


def make_scene(
    rng: SeededRng,
    frame_id: str = "synthetic",
    n_objects: tuple[int, int] = (3, 6),
    plane_points: int = 1200,
    surface_density: float = 40.0,
    min_gap: float = 2.0,
    plane_noise: float = 0.02,
    surface_noise: float = 0.0,
    r_range: tuple[float, float] = (8.0, 18.0),
    size_xy: tuple[float, float] = (1.0, 3.5),
) -> SyntheticScene:
    """Plane plus well-separated objects; labels: -1 ground, 0..K-1 objects.

    Object point counts scale with surface area (``surface_density`` points
    per m^2) so neighbor spacing stays compatible with the default
    clustering scale regardless of object size.
    """
    k = int(rng.integers(n_objects[0], n_objects[1] + 1))
    boxes: list[Box3D] = []
    for cid in range(k):
        for _ in range(100):
            cand = random_box(rng, cid, r_range=r_range, size_xy=size_xy)
            ok = True
            for b in boxes:
                gap = math.hypot(cand.cx - b.cx, cand.cy - b.cy)
                reach = (math.hypot(cand.dx, cand.dy) + math.hypot(b.dx, b.dy)) / 2
                if gap < reach + min_gap:
                    ok = False
                    break
            if ok:
                boxes.append(cand)
                break
    plane = sample_plane_points(rng, plane_points, noise=plane_noise)
    parts = [plane]
    labels = [np.full(len(plane), -1, dtype=np.int32)]
    for box in boxes:
        n = max(40, int(round(surface_area(box) * surface_density)))
        parts.append(sample_box_surface(rng, box, n, noise=surface_noise))
        labels.append(np.full(n, box.cluster_id, dtype=np.int32))
    xyz = np.concatenate(parts)
    cloud = PointCloud(frame_id, xyz, rng.random(len(xyz)), np.concatenate(labels))
    return SyntheticScene(cloud, tuple(boxes))


def make_dense_cloud(
    rng: SeededRng,
    n: int,
    elev_range_deg: tuple[float, float] = (-24.0, 2.0),
    r_range: tuple[float, float] = (5.0, 40.0),
    frame_id: str = "dense",
) -> PointCloud:
    """Dense shell of returns spanning a given elevation band."""
    e = np.radians(rng.uniform(*elev_range_deg, n))
    a = rng.uniform(-math.pi, math.pi, n)
    r = rng.uniform(*r_range, n)
    ce = np.cos(e)
    xyz = np.column_stack([r * ce * np.cos(a), r * ce * np.sin(a), r * np.sin(e)])
    return PointCloud(frame_id, xyz, rng.random(n))
