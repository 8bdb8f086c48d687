"""Upright pseudo-box fitting and common-sense cluster filtering.

The rectangle fit searches heading angles in [0, 90) degrees and scores
each candidate by how tightly points hug the two nearest rectangle edges
(variance of edge distances, lower is better). The best 1-degree grid cell
is refined by golden-section search to machine tolerance, so fits are
exactly rigid-motion equivariant up to floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cluster import dbscan, filter_small_clusters, hdbscan
from .ground import GroundParams, NoGroundError, fit_ground, split_ground
from .rng import SeededRng
from .types import Box3D, GroundModel, GroundPlane, PointCloud, wrap_half_pi

__all__ = [
    "MIN_BOX_DIM",
    "FilterParams",
    "PipelineParams",
    "lshape_fit",
    "commonsense_filter",
    "generate_pseudo_boxes",
]

# Floor on box dimensions keeps log-size regression targets finite for
# degenerate (flat or thin) clusters.
MIN_BOX_DIM = 0.05

_GRID_STEP = math.radians(1.0)
_GOLDEN_TOL = 1e-12


@dataclass(frozen=True)
class FilterParams:
    """Plausibility thresholds for fitted boxes (repo-chosen defaults)."""

    max_volume_m3: float = 150.0
    max_bottom_above_ground_m: float = 0.8
    min_top_above_ground_m: float = 0.3


@dataclass(frozen=True)
class PipelineParams:
    """End-to-end pseudo-box generation settings."""

    ground: GroundParams = GroundParams()
    cluster_algo: str = "dbscan"
    eps: float = 0.25
    min_cluster_size: int = 20
    min_samples: int | None = None
    dbscan_min_pts: int = 5
    filters: FilterParams = FilterParams()

    def __post_init__(self):
        if self.cluster_algo not in ("dbscan", "hdbscan"):
            raise ValueError("cluster_algo must be 'dbscan' or 'hdbscan'")


def _edge_distance_score(xy: np.ndarray, theta: float) -> float:
    """Negated variance of distances to the nearest rectangle edge pair."""
    c, s = math.cos(theta), math.sin(theta)
    c1 = xy[:, 0] * c + xy[:, 1] * s
    c2 = -xy[:, 0] * s + xy[:, 1] * c
    d1 = np.minimum(c1.max() - c1, c1 - c1.min())
    d2 = np.minimum(c2.max() - c2, c2 - c2.min())
    take1 = d1 < d2
    e1 = d1[take1]
    e2 = d2[~take1]
    score = 0.0
    if len(e1):
        score -= float(np.var(e1))
    if len(e2):
        score -= float(np.var(e2))
    return score


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = f(x2)
    return (a + b) / 2


def lshape_fit(cluster_points, cluster_id: int = 0) -> Box3D:
    """Fit an upright box around a cluster (>= 3 points).

    The box is the minimal rectangle at the best-scoring heading, extended
    to [min z, max z]; every input point lies inside. The heading is
    canonicalized so the longer horizontal edge defines dx and
    theta in [-pi/2, pi/2). Collinear clusters fall back to an axis-aligned
    box at theta = 0. Dimensions are floored at MIN_BOX_DIM.
    """
    pts = np.asarray(cluster_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise ValueError("cluster must contain at least 3 points")
    xy = pts[:, :2]
    centered = xy - xy.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        theta = 0.0  # collinear footprint: axis-aligned fallback
    else:
        grid = np.arange(0.0, math.pi / 2, _GRID_STEP)
        scores = [_edge_distance_score(xy, t) for t in grid]
        best = int(np.argmax(scores))
        theta = _golden_max(
            lambda t: _edge_distance_score(xy, t),
            grid[best] - _GRID_STEP,
            grid[best] + _GRID_STEP,
            _GOLDEN_TOL,
        )

    c, s = math.cos(theta), math.sin(theta)
    u = xy[:, 0] * c + xy[:, 1] * s
    v = -xy[:, 0] * s + xy[:, 1] * c
    du = max(float(u.max() - u.min()), MIN_BOX_DIM)
    dv = max(float(v.max() - v.min()), MIN_BOX_DIM)
    cu = (u.max() + u.min()) / 2
    cv = (v.max() + v.min()) / 2
    cx = cu * c - cv * s
    cy = cu * s + cv * c
    zmin, zmax = float(pts[:, 2].min()), float(pts[:, 2].max())
    dz = max(zmax - zmin, MIN_BOX_DIM)

    if dv > du:
        du, dv = dv, du
        theta += math.pi / 2
    return Box3D(
        cx=float(cx),
        cy=float(cy),
        cz=(zmin + zmax) / 2,
        dx=du,
        dy=dv,
        dz=dz,
        heading=float(wrap_half_pi(theta)),
        cluster_id=cluster_id,
    )


def commonsense_filter(
    boxes,
    ground: GroundModel,
    params: FilterParams = FilterParams(),
    return_stats: bool = False,
):
    """Drop implausible boxes: oversized, floating, or underground.

    A box survives iff volume <= max_volume AND its bottom is at most
    ``max_bottom_above_ground`` above the local ground AND its top is at
    least ``min_top_above_ground`` above it. ``return_stats`` additionally
    reports per-rule rejection counts (a box may violate several rules).
    """
    kept = []
    stats = {"volume": 0, "floating": 0, "underground": 0}
    for box in boxes:
        gz = ground.height_at(box.cx, box.cy)
        ok = True
        if box.volume > params.max_volume_m3:
            stats["volume"] += 1
            ok = False
        if box.bottom_z - gz > params.max_bottom_above_ground_m:
            stats["floating"] += 1
            ok = False
        if box.top_z - gz < params.min_top_above_ground_m:
            stats["underground"] += 1
            ok = False
        if ok:
            kept.append(box)
    if return_stats:
        return kept, stats
    return kept


def _fallback_ground(cloud: PointCloud, threshold: float) -> GroundModel:
    # Horizontal plane at the lowest point keeps filter rules meaningful
    # when no ground could be fit.
    z0 = float(cloud.xyz[:, 2].min()) if len(cloud) else 0.0
    return GroundModel.single(GroundPlane(0.0, 0.0, 1.0, -z0), threshold)


def generate_pseudo_boxes(
    cloud: PointCloud,
    rng: SeededRng,
    params: PipelineParams = PipelineParams(),
    return_stats: bool = False,
):
    """Full per-frame pipeline: ground split, cluster, fit, filter.

    Returns (labels, boxes): labels mark only points of surviving boxes'
    clusters, compacted to 0..K-1, and each surviving cluster has exactly
    one box whose cluster_id matches. When no ground can be fit, every
    point is treated as non-ground.
    """
    if len(cloud) == 0:
        raise ValueError("cloud must be non-empty")
    try:
        model = fit_ground(cloud, rng.child(0), params.ground)
        _, nonground = split_ground(cloud, model)
    except NoGroundError:
        model = _fallback_ground(cloud, params.ground.inlier_threshold_m)
        nonground = np.arange(len(cloud))

    labels = np.full(len(cloud), -1, dtype=np.int32)
    if len(nonground):
        sub = cloud.xyz[nonground]
        if params.cluster_algo == "dbscan":
            sub_labels = dbscan(sub, params.eps, params.dbscan_min_pts)
        else:
            sub_labels = hdbscan(
                sub, params.min_cluster_size, params.min_samples, selection_eps=params.eps
            )
        labels[nonground] = sub_labels
    labels = filter_small_clusters(labels, params.min_cluster_size)

    boxes = []
    for cid in range(labels.max() + 1 if labels.size else 0):
        boxes.append(lshape_fit(cloud.xyz[labels == cid], cluster_id=cid))
    kept, stats = commonsense_filter(boxes, model, params.filters, return_stats=True)

    # Drop labels of filtered clusters and renumber labels and boxes together.
    surviving = [b.cluster_id for b in kept]
    final = np.full_like(labels, -1)
    out_boxes = []
    for new_id, old_id in enumerate(surviving):
        final[labels == old_id] = new_id
        out_boxes.append(replace(kept[new_id], cluster_id=new_id))
    if return_stats:
        stats = dict(stats, clusters=int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0)
        return final, out_boxes, stats
    return final, out_boxes
