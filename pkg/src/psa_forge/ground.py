"""Ground / non-ground partitioning via range-zoned RANSAC plane fitting.

The scan is divided into concentric range zones and a plane is fit per
zone, which tolerates the mild ground curvature of real scans while
staying a plain, verifiable algorithm. RANSAC seed triples are drawn only
from the lowest z quantile per zone so elevated structure (roofs, canopy)
cannot capture the fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SeededRng
from .types import GroundModel, GroundPlane, PointCloud

__all__ = ["GroundParams", "NoGroundError", "fit_ground", "split_ground", "ransac_plane"]


@dataclass(frozen=True)
class GroundParams:
    iterations: int = 200
    inlier_threshold_m: float = 0.25
    zone_count: int = 4
    seed_height_quantile: float = 0.30
    # reject candidate planes tilted more than ~60 degrees from horizontal
    min_normal_z: float = 0.5

    def __post_init__(self):
        if self.iterations < 1 or self.zone_count < 1:
            raise ValueError("iterations and zone_count must be >= 1")
        if not 0 < self.inlier_threshold_m:
            raise ValueError("inlier_threshold_m must be positive")
        if not 0 < self.seed_height_quantile <= 1:
            raise ValueError("seed_height_quantile must be in (0, 1]")


class NoGroundError(RuntimeError):
    """Too few low points to attempt a ground fit."""


def _plane_from_triple(p0, p1, p2, min_normal_z: float) -> GroundPlane | None:
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    if n[2] < 0:
        n = -n
    if n[2] < min_normal_z:
        return None
    return GroundPlane(float(n[0]), float(n[1]), float(n[2]), float(-n @ p0))


def _refit(points: np.ndarray, min_normal_z: float) -> GroundPlane | None:
    """Least-squares plane through inliers (smallest covariance eigenvector)."""
    centroid = points.mean(axis=0)
    cov = np.cov((points - centroid).T)
    w, v = np.linalg.eigh(cov)
    n = v[:, 0]
    if abs(n[2]) < min_normal_z:
        return None
    if n[2] < 0:
        n = -n
    return GroundPlane(float(n[0]), float(n[1]), float(n[2]), float(-n @ centroid))


def ransac_plane(
    xyz: np.ndarray,
    candidates: np.ndarray,
    rng: SeededRng,
    iterations: int,
    threshold: float,
    min_normal_z: float = 0.5,
) -> tuple[GroundPlane | None, int, list[int]]:
    """Best plane by inlier count over ``xyz``; seeds drawn from ``candidates``.

    Returns (plane, inlier_count, best-so-far trace). The trace is
    non-decreasing by construction; ties keep the earlier plane.
    """
    best: GroundPlane | None = None
    best_count = -1
    trace: list[int] = []
    for _ in range(iterations):
        triple = candidates[rng.choose(len(candidates), 3)]
        plane = _plane_from_triple(xyz[triple[0]], xyz[triple[1]], xyz[triple[2]], min_normal_z)
        if plane is not None:
            count = int((np.abs(plane.signed_distance(xyz)) <= threshold).sum())
            if count > best_count:
                best, best_count = plane, count
        trace.append(best_count)
    if best is None:
        return None, 0, trace
    # Polish with a least-squares refit; adopt only if it does not lose inliers.
    inliers = np.abs(best.signed_distance(xyz)) <= threshold
    if inliers.sum() >= 3:
        refit = _refit(xyz[inliers], min_normal_z)
        if refit is not None:
            count = int((np.abs(refit.signed_distance(xyz)) <= threshold).sum())
            if count >= best_count:
                best, best_count = refit, count
    return best, best_count, trace


def fit_ground(cloud: PointCloud, rng: SeededRng, params: GroundParams = GroundParams()) -> GroundModel:
    """Fit one upward-oriented ground plane per concentric range zone.

    Raises :class:`NoGroundError` when fewer than 3 seed candidates exist in
    the whole scan; callers then treat every point as non-ground. Zones that
    cannot be fit locally inherit the nearest fitted zone's plane.
    """
    xyz = cloud.xyz
    if len(xyz) == 0:
        raise NoGroundError("empty cloud")
    r = np.hypot(xyz[:, 0], xyz[:, 1])
    edges = np.linspace(0.0, float(r.max()), params.zone_count + 1)
    edges[-1] = math.inf
    zone = np.searchsorted(edges[1:-1], r, side="right")

    total_candidates = 0
    planes: list[GroundPlane | None] = []
    for zi in range(params.zone_count):
        idx = np.nonzero(zone == zi)[0]
        plane = None
        if len(idx) >= 3:
            z_cut = np.quantile(xyz[idx, 2], params.seed_height_quantile)
            cand = idx[xyz[idx, 2] <= z_cut]
            total_candidates += len(cand)
            if len(cand) >= 3:
                plane, _, _ = ransac_plane(
                    xyz[idx],
                    np.searchsorted(idx, cand),
                    rng.child(zi),
                    params.iterations,
                    params.inlier_threshold_m,
                    params.min_normal_z,
                )
        planes.append(plane)

    if total_candidates < 3 or all(p is None for p in planes):
        raise NoGroundError("fewer than 3 usable seed points")

    fitted = [zi for zi, p in enumerate(planes) if p is not None]
    filled = tuple(
        planes[zi] if planes[zi] is not None else planes[min(fitted, key=lambda f: abs(f - zi))]
        for zi in range(params.zone_count)
    )
    return GroundModel(filled, tuple(edges.tolist()), params.inlier_threshold_m)


def split_ground(cloud: PointCloud, model: GroundModel) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive, disjoint (ground, non-ground) index partition.

    A point is ground iff the absolute signed distance to its zone's plane
    is within the model's inlier threshold.
    """
    if len(cloud) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    d = model.signed_distance(cloud.xyz)
    is_ground = np.abs(d) <= model.inlier_threshold
    idx = np.arange(len(cloud))
    return idx[is_ground], idx[~is_ground]
