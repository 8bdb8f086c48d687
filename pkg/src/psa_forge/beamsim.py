"""Spherical range-image projection and beam-pattern re-simulation.

Projection conventions (fixed so results are reproducible by hand):

* range r = ||(x, y, z)||, azimuth alpha = atan2(y, x), elevation
  e = asin(z / r);
* row = floor((1 - (e - f_down) / (f_up - f_down)) * H), clamped to
  [0, H-1]; points outside the vertical field of view are discarded;
* col = floor(((1 - alpha / pi) / 2) * W) mod W, so alpha = pi maps to
  column 0 and decreasing azimuth increases the column index;
* cell conflicts keep the nearest point (lowest index on exact ties);
* points with r > max_range or r = 0 are discarded.

Unprojection emits one point per non-empty cell along the cell-center ray,
so a project/unproject round trip moves a surviving point by at most half
a bin in each angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .rng import SeededRng
from .types import LidarConfig, PointCloud, RangeImage

__all__ = [
    "project",
    "unproject",
    "resample_pattern",
    "sample_config",
    "PolarMixPlan",
    "sample_polarmix",
    "apply_polarmix",
    "polarmix",
    "POLARMIX_RENDERS",
    "POLARMIX_CROP_DEG",
]

# Defaults for sector-mixed re-simulation: number of independent renders
# and the sector width range in degrees.
POLARMIX_RENDERS = 5
POLARMIX_CROP_DEG = (10.0, 90.0)


def project(cloud: PointCloud, config: LidarConfig) -> RangeImage:
    """Project points into an H x W range image (nearest point per cell)."""
    h, w = config.beams, config.columns
    xyz = cloud.xyz
    r = np.linalg.norm(xyz, axis=1)
    keep = (r > 0) & (r <= config.max_range_m)
    fd, fu = config.f_down_rad, config.f_up_rad
    e = np.zeros_like(r)
    np.divide(xyz[:, 2], r, out=e, where=keep)
    e = np.arcsin(np.clip(e, -1.0, 1.0))
    keep &= (e >= fd) & (e <= fu)

    idx = np.nonzero(keep)[0]
    r = r[idx]
    e = e[idx]
    alpha = np.arctan2(cloud.xyz[idx, 1], cloud.xyz[idx, 0])
    rows = np.floor((1.0 - (e - fd) / (fu - fd)) * h).astype(np.int64)
    np.clip(rows, 0, h - 1, out=rows)
    cols = np.floor(((1.0 - alpha / np.pi) / 2.0) * w).astype(np.int64) % w

    # Write losers first so the surviving value per cell is the nearest
    # range; ties keep the lowest source index.
    order = np.lexsort((-idx, -r))
    rimg = np.zeros((h, w))
    iimg = np.zeros((h, w))
    pidx = np.full((h, w), -1, dtype=np.int64)
    rimg[rows[order], cols[order]] = r[order]
    iimg[rows[order], cols[order]] = cloud.intensity[idx[order]]
    pidx[rows[order], cols[order]] = idx[order]
    return RangeImage(config, rimg, iimg, pidx)


def _filled_cells(img: RangeImage) -> tuple[np.ndarray, np.ndarray]:
    return np.nonzero(img.range_m > 0)


def unproject(img: RangeImage, frame_id: str = "") -> PointCloud:
    """One point per non-empty cell along the cell-center direction."""
    h, w = img.config.beams, img.config.columns
    fd, fu = img.config.f_down_rad, img.config.f_up_rad
    rows, cols = _filled_cells(img)
    r = img.range_m[rows, cols]
    e = fd + (fu - fd) * (1.0 - (rows + 0.5) / h)
    alpha = np.pi * (1.0 - 2.0 * (cols + 0.5) / w)
    ce = np.cos(e)
    xyz = np.column_stack([r * ce * np.cos(alpha), r * ce * np.sin(alpha), r * np.sin(e)])
    return PointCloud(frame_id, xyz, img.intensity[rows, cols])


def resample_pattern(cloud: PointCloud, config: LidarConfig) -> PointCloud:
    """Re-simulate a scan under a different sensor geometry.

    Composition of project and unproject; labels and intensity are carried
    from the cell-winning source point. Never increases the point count and
    applies no coordinate transform beyond the angular quantization.
    """
    img = project(cloud, config)
    out = unproject(img, cloud.frame_id)
    if cloud.labels is not None:
        rows, cols = _filled_cells(img)
        out = out.with_labels(cloud.labels[img.point_index[rows, cols]])
    return out


def sample_config(rng: SeededRng, profiles, probs: Sequence[float]) -> LidarConfig:
    """Categorical draw of a sensor profile.

    ``profiles`` is an ordered name->config mapping or a sequence;
    ``probs`` must match its length and sum to 1 within 1e-9.
    """
    configs = list(profiles.values()) if isinstance(profiles, Mapping) else list(profiles)
    p = np.asarray(probs, dtype=float)
    if len(p) != len(configs):
        raise ValueError(f"{len(p)} probabilities for {len(configs)} profiles")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1, got {p.sum()!r}")
    if (p < 0).any():
        raise ValueError("probabilities must be non-negative")
    return configs[rng.categorical(p)]


@dataclass(frozen=True)
class PolarMixPlan:
    """Materialized sector mix: render config names plus azimuth sectors.

    Sectors partition [-pi, pi); sector i takes its points from render
    i mod len(config_names).
    """

    config_names: tuple[str, ...]
    sectors: tuple[tuple[float, float], ...]


def sample_polarmix(
    rng: SeededRng,
    profiles,
    probs: Sequence[float] | None = None,
    n_renders: int = POLARMIX_RENDERS,
    crop_deg_range: tuple[float, float] = POLARMIX_CROP_DEG,
) -> PolarMixPlan:
    """Draw render configs and a sector partition of [-pi, pi).

    Sector widths are uniform in ``crop_deg_range``; the last sector is
    truncated to absorb whatever azimuth remains.
    """
    if n_renders < 1:
        raise ValueError("n_renders must be >= 1")
    configs = list(profiles.values()) if isinstance(profiles, Mapping) else list(profiles)
    if probs is None:
        probs = [1.0 / len(configs)] * len(configs)
    names = tuple(sample_config(rng, profiles, probs).name for _ in range(n_renders))
    sectors = []
    lo = -math.pi
    while lo < math.pi - 1e-12:
        width = math.radians(rng.uniform(*crop_deg_range))
        hi = min(lo + width, math.pi)
        sectors.append((lo, hi))
        lo = hi
    return PolarMixPlan(names, tuple(sectors))


def apply_polarmix(cloud: PointCloud, plan: PolarMixPlan, profiles: Mapping[str, LidarConfig]) -> PointCloud:
    renders = [resample_pattern(cloud, profiles[name]) for name in plan.config_names]
    pieces = []
    for i, (lo, hi) in enumerate(plan.sectors):
        rc = renders[i % len(renders)]
        alpha = np.arctan2(rc.xyz[:, 1], rc.xyz[:, 0])
        alpha = np.where(alpha == np.pi, -np.pi, alpha)  # canonical [-pi, pi)
        pieces.append(rc.select((alpha >= lo) & (alpha < hi)))
    return PointCloud.concat(pieces, cloud.frame_id)


def polarmix(
    cloud: PointCloud,
    rng: SeededRng,
    profiles,
    probs: Sequence[float] | None = None,
    n_renders: int = POLARMIX_RENDERS,
    crop_deg_range: tuple[float, float] = POLARMIX_CROP_DEG,
) -> PointCloud:
    """Render under several sampled configs and mix by azimuth sector."""
    plan = sample_polarmix(rng, profiles, probs, n_renders, crop_deg_range)
    mapping = profiles if isinstance(profiles, Mapping) else {c.name: c for c in profiles}
    return apply_polarmix(cloud, plan, mapping)
