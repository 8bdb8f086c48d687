"""Two-view augmentation: rigid/scale transforms, cuboid drops, and the
optional beam-pattern step, applied consistently to points and boxes.

The geometric order is fixed: flip -> rotate about z -> scale about the
origin -> translate -> cuboid drop -> pattern step. Records materialize
every stochastic choice, so a record alone replays the transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .beamsim import (
    POLARMIX_CROP_DEG,
    POLARMIX_RENDERS,
    PolarMixPlan,
    apply_polarmix,
    resample_pattern,
    sample_config,
    sample_polarmix,
)
from .rng import SeededRng
from .scanio import DEFAULT_CONFIG_PROBS, default_profiles
from .types import AugRecord, Box3D, Cuboid, LidarConfig, PointCloud, wrap_half_pi

__all__ = ["AugRanges", "ViewPair", "sample_aug", "apply_to_points", "apply_to_boxes", "make_views"]

# Fallback cuboid-drop region when neither the ranges nor the caller
# provide scene bounds.
_DEFAULT_REGION: Cuboid = ((-50.0, -50.0, -3.0), (50.0, 50.0, 3.0))


@dataclass(frozen=True)
class AugRanges:
    """Sampling ranges for one augmentation draw (repo-chosen defaults)."""

    rot_z_max: float = math.pi
    trans_max: float = 1.0
    scale_range: tuple[float, float] = (0.95, 1.05)
    flip_prob: float = 0.5
    n_cuboids_range: tuple[int, int] = (1, 3)
    cuboid_size_range: tuple[float, float] = (2.0, 8.0)
    cuboid_region: Cuboid | None = None

    def __post_init__(self):
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise ValueError("scale_range must satisfy 0 < min <= max")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be in [0, 1]")
        if self.n_cuboids_range[0] < 0 or self.n_cuboids_range[1] < self.n_cuboids_range[0]:
            raise ValueError("n_cuboids_range must be a non-negative ordered pair")

    @classmethod
    def identity(cls) -> "AugRanges":
        return cls(rot_z_max=0.0, trans_max=0.0, scale_range=(1.0, 1.0), flip_prob=0.0, n_cuboids_range=(0, 0))


def sample_aug(rng: SeededRng, ranges: AugRanges = AugRanges(), bounds=None) -> AugRecord:
    """Materialize one augmentation draw; no hidden state remains.

    Draw order is fixed (flips, rotation, translation, scale, cuboids).
    Cuboid centers are uniform within ``ranges.cuboid_region``, else the
    supplied (min, max) ``bounds``, else a generic region.
    """
    flip_x = rng.coin(ranges.flip_prob)
    flip_y = rng.coin(ranges.flip_prob)
    rot = float(rng.uniform(-ranges.rot_z_max, ranges.rot_z_max))
    trans = tuple(float(v) for v in rng.uniform(-ranges.trans_max, ranges.trans_max, 3))
    scale = float(rng.uniform(*ranges.scale_range))
    n_cuboids = int(rng.integers(ranges.n_cuboids_range[0], ranges.n_cuboids_range[1] + 1))
    region = ranges.cuboid_region
    if region is None:
        region = tuple(map(tuple, bounds)) if bounds is not None else _DEFAULT_REGION
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    cuboids = []
    for _ in range(n_cuboids):
        edges = rng.uniform(*ranges.cuboid_size_range, 3)
        center = rng.uniform(0.0, 1.0, 3) * (hi - lo) + lo
        cuboids.append((tuple(center - edges / 2), tuple(center + edges / 2)))
    return AugRecord(
        flip_x=flip_x,
        flip_y=flip_y,
        rotation_z=rot,
        translation=trans,
        scale=scale,
        dropped_cuboids=tuple(cuboids),
    )


def _rigid_scale_xyz(xyz: np.ndarray, rec: AugRecord) -> np.ndarray:
    out = xyz.copy()
    if rec.flip_x:
        out[:, 0] = -out[:, 0]
    if rec.flip_y:
        out[:, 1] = -out[:, 1]
    c, s = math.cos(rec.rotation_z), math.sin(rec.rotation_z)
    x = out[:, 0] * c - out[:, 1] * s
    y = out[:, 0] * s + out[:, 1] * c
    out[:, 0], out[:, 1] = x, y
    out *= rec.scale
    out += np.asarray(rec.translation)
    return out


def apply_to_points(
    cloud: PointCloud,
    rec: AugRecord,
    profiles: Mapping[str, LidarConfig] | None = None,
) -> PointCloud:
    """Replay a record onto points; labels and intensity follow survivors."""
    xyz = _rigid_scale_xyz(cloud.xyz, rec)
    mask = np.ones(len(xyz), dtype=bool)
    for lo, hi in rec.dropped_cuboids:
        inside = ((xyz >= np.asarray(lo)) & (xyz <= np.asarray(hi))).all(axis=1)
        mask &= ~inside
    out = PointCloud(
        cloud.frame_id,
        xyz[mask],
        cloud.intensity[mask],
        None if cloud.labels is None else cloud.labels[mask],
    )
    if rec.has_pattern:
        if profiles is None:
            raise ValueError("record carries a pattern step but no profiles were given")
        if rec.lidar_config is not None:
            out = resample_pattern(out, profiles[rec.lidar_config])
        else:
            out = apply_polarmix(out, PolarMixPlan(rec.polarmix_configs, rec.polarmix_sectors), profiles)
    return out


def apply_to_boxes(boxes, rec: AugRecord, surviving_labels=None) -> list[Box3D]:
    """Replay a record onto boxes: centers move like points, sizes scale,
    headings rotate (and reflect under a single flip).

    ``surviving_labels``, when given, is the set of cluster ids that still
    have points in the transformed view; boxes of emptied clusters drop.
    """
    out = []
    centers = np.array([[b.cx, b.cy, b.cz] for b in boxes], dtype=float).reshape(-1, 3)
    centers = _rigid_scale_xyz(centers, rec) if len(boxes) else centers
    for b, ctr in zip(boxes, centers):
        theta = -b.heading if (rec.flip_x != rec.flip_y) else b.heading
        theta += rec.rotation_z
        out.append(
            replace(
                b,
                cx=float(ctr[0]),
                cy=float(ctr[1]),
                cz=float(ctr[2]),
                dx=b.dx * rec.scale,
                dy=b.dy * rec.scale,
                dz=b.dz * rec.scale,
                heading=float(wrap_half_pi(theta)),
            )
        )
    if surviving_labels is not None:
        keep = set(int(v) for v in surviving_labels)
        out = [b for b in out if b.cluster_id in keep]
    return out


@dataclass(frozen=True)
class ViewPair:
    """Two augmented views of one frame plus their replay records."""

    view_q: PointCloud
    boxes_q: tuple[Box3D, ...]
    view_k: PointCloud
    boxes_k: tuple[Box3D, ...]
    rec_q: AugRecord
    rec_k: AugRecord


def _surviving(view: PointCloud):
    # Unlabeled clouds carry no cluster bookkeeping; skip box dropping.
    if view.labels is None:
        return None
    return np.unique(view.labels[view.labels >= 0])


def make_views(
    cloud: PointCloud,
    boxes,
    rng: SeededRng,
    mode: str = "single_pattern",
    ranges: AugRanges = AugRanges(),
    profiles: Mapping[str, LidarConfig] | None = None,
    probs: Sequence[float] | None = None,
    pattern_view: str | None = None,
    n_renders: int = POLARMIX_RENDERS,
    crop_deg_range: tuple[float, float] = POLARMIX_CROP_DEG,
) -> ViewPair:
    """Build the two pretraining views of a frame.

    Both views draw independent augmentation records (rng children 0 and
    1); in ``single_pattern`` / ``polarmix`` modes exactly one view,
    selected by a fair coin (rng child 2) unless ``pattern_view`` forces
    "q" or "k", additionally gets the beam-pattern step. Boxes follow their
    view's record and boxes of emptied clusters are dropped.
    """
    if mode not in ("single_pattern", "polarmix", "none"):
        raise ValueError(f"unknown mode {mode!r}")
    bounds = cloud.bounds()
    rec_q = sample_aug(rng.child(0), ranges, bounds)
    rec_k = sample_aug(rng.child(1), ranges, bounds)
    rc = rng.child(2)
    if mode != "none":
        if profiles is None:
            profiles = default_profiles()
            if probs is None:
                probs = DEFAULT_CONFIG_PROBS
        if probs is None:
            probs = [1.0 / len(profiles)] * len(profiles)
        target = pattern_view or ("q" if rc.coin(0.5) else "k")
        if target not in ("q", "k"):
            raise ValueError("pattern_view must be 'q' or 'k'")
        if mode == "single_pattern":
            cfg = sample_config(rc, profiles, probs)
            patch = {"lidar_config": cfg.name}
        else:
            plan = sample_polarmix(rc, profiles, probs, n_renders, crop_deg_range)
            patch = {"polarmix_configs": plan.config_names, "polarmix_sectors": plan.sectors}
        if target == "q":
            rec_q = replace(rec_q, **patch)
        else:
            rec_k = replace(rec_k, **patch)
    view_q = apply_to_points(cloud, rec_q, profiles)
    view_k = apply_to_points(cloud, rec_k, profiles)
    boxes_q = apply_to_boxes(boxes, rec_q, surviving_labels=_surviving(view_q))
    boxes_k = apply_to_boxes(boxes, rec_k, surviving_labels=_surviving(view_k))
    return ViewPair(view_q, tuple(boxes_q), view_k, tuple(boxes_k), rec_q, rec_k)
