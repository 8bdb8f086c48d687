"""Per-point box regression targets relative to a fixed cube anchor.

A unit-heading anchor cube of edge ``anchor_dim`` sits on every clustered
point. Targets are the standard diagonal-normalized center offsets,
log-size residuals, and the wrapped heading:

    dx_t = (cx - px) / delta,  delta = sqrt(2) * anchor_dim
    dy_t = (cy - py) / delta
    dz_t = (cz - pz) / anchor_dim
    dl, dw, dh = ln(size / anchor_dim)
    dtheta = heading wrapped to [-pi/2, pi/2)

:func:`decode_box` is the exact algebraic inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import Box3D, PointCloud, wrap_half_pi

__all__ = ["RegressionTarget", "MissingBoxError", "encode_targets", "decode_box"]


class MissingBoxError(KeyError):
    """A labeled cluster has no matching box."""


@dataclass(frozen=True, eq=False)
class RegressionTarget:
    """(N, 7) target rows plus a validity mask (True iff label >= 0)."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1, 7)
        valid = np.array(self.valid, dtype=bool, copy=True).reshape(-1)
        if len(values) != len(valid):
            raise ValueError("values and valid must align")
        if not np.isfinite(values[valid]).all():
            raise ValueError("valid target rows must be finite")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


def encode_targets(cloud: PointCloud, boxes, anchor_dim: float = 1.0) -> RegressionTarget:
    """Targets for every clustered point; unlabeled rows are zero/invalid."""
    if anchor_dim <= 0:
        raise ValueError("anchor_dim must be positive")
    n = len(cloud)
    values = np.zeros((n, 7))
    if cloud.labels is None:
        return RegressionTarget(values, np.zeros(n, dtype=bool))
    valid = cloud.labels >= 0
    by_id = {b.cluster_id: b for b in boxes}
    delta = math.sqrt(2.0) * anchor_dim
    for cid in np.unique(cloud.labels[valid]):
        box = by_id.get(int(cid))
        if box is None:
            raise MissingBoxError(f"no box for cluster {int(cid)}")
        rows = cloud.labels == cid
        pts = cloud.xyz[rows]
        values[rows, 0] = (box.cx - pts[:, 0]) / delta
        values[rows, 1] = (box.cy - pts[:, 1]) / delta
        values[rows, 2] = (box.cz - pts[:, 2]) / anchor_dim
        values[rows, 3] = math.log(box.dx / anchor_dim)
        values[rows, 4] = math.log(box.dy / anchor_dim)
        values[rows, 5] = math.log(box.dz / anchor_dim)
        values[rows, 6] = wrap_half_pi(box.heading)
    return RegressionTarget(values, valid)


def decode_box(point_xyz, pred, anchor_dim: float = 1.0, cluster_id: int = 0) -> Box3D:
    """Invert the target encoding around one point."""
    p = np.asarray(point_xyz, dtype=float).reshape(3)
    v = np.asarray(pred, dtype=float).reshape(7)
    if not np.isfinite(v).all():
        raise ValueError("prediction must be finite")
    delta = math.sqrt(2.0) * anchor_dim
    return Box3D(
        cx=float(p[0] + v[0] * delta),
        cy=float(p[1] + v[1] * delta),
        cz=float(p[2] + v[2] * anchor_dim),
        dx=float(anchor_dim * math.exp(v[3])),
        dy=float(anchor_dim * math.exp(v[4])),
        dz=float(anchor_dim * math.exp(v[5])),
        heading=float(wrap_half_pi(v[6])),
        cluster_id=cluster_id,
    )
