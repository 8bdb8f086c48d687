"""Core value types shared across the pipeline.

All types are immutable: dataclasses are frozen and numpy payloads are
stored as read-only copies, so values can be shared freely between
parallel workers without defensive copying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Point",
    "PointCloud",
    "Box3D",
    "GroundPlane",
    "GroundModel",
    "LidarConfig",
    "RangeImage",
    "AugRecord",
    "Cuboid",
    "wrap_half_pi",
]

# Axis-aligned cuboid as (min corner, max corner), each an (x, y, z) triple.
Cuboid = tuple[tuple[float, float, float], tuple[float, float, float]]


def wrap_half_pi(theta):
    """Wrap an angle (or array of angles) into [-pi/2, pi/2)."""
    return (np.asarray(theta) + np.pi / 2) % np.pi - np.pi / 2


def _frozen(values, dtype, shape_tail: tuple[int, ...] = ()) -> np.ndarray:
    """Copy input into a read-only contiguous array with shape (N, *tail)."""
    arr = np.array(values, dtype=dtype, copy=True, order="C")
    if arr.ndim == len(shape_tail):  # allow an empty input
        arr = arr.reshape((0,) + shape_tail)
    if arr.shape[1:] != shape_tail:
        raise ValueError(f"expected trailing shape {shape_tail}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


class Point(NamedTuple):
    """Single return point: coordinates in meters plus a reflectance value."""

    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    """One frame of points with optional per-point cluster labels.

    ``labels`` uses -1 for ground / noise / unclustered points and ids >= 0
    for cluster membership; when present it has exactly one entry per point.
    """

    frame_id: str
    xyz: np.ndarray
    intensity: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        xyz = _frozen(self.xyz, np.float64, (3,))
        intensity = _frozen(self.intensity, np.float64)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", intensity)
        if len(intensity) != len(xyz):
            raise ValueError("intensity length must match point count")
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        if not np.isfinite(intensity).all() or (intensity < 0).any():
            raise ValueError("intensity must be finite and >= 0")
        if self.labels is not None:
            labels = _frozen(self.labels, np.int32)
            object.__setattr__(self, "labels", labels)
            if len(labels) != len(xyz):
                raise ValueError("labels length must match point count")
            if len(labels) and labels.min() < -1:
                raise ValueError("labels must be >= -1")

    def __len__(self) -> int:
        return len(self.xyz)

    def point(self, i: int) -> Point:
        x, y, z = self.xyz[i]
        return Point(float(x), float(y), float(z), float(self.intensity[i]))

    def select(self, index) -> "PointCloud":
        """Subset by boolean mask or index array; labels follow."""
        labels = None if self.labels is None else self.labels[index]
        return PointCloud(self.frame_id, self.xyz[index], self.intensity[index], labels)

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.frame_id, self.xyz, self.intensity, labels)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            z = np.zeros(3)
            return z, z
        return self.xyz.min(axis=0), self.xyz.max(axis=0)

    @staticmethod
    def concat(clouds: Sequence["PointCloud"], frame_id: str | None = None) -> "PointCloud":
        if not clouds:
            return PointCloud(frame_id or "", np.zeros((0, 3)), np.zeros(0))
        fid = frame_id if frame_id is not None else clouds[0].frame_id
        xyz = np.concatenate([c.xyz for c in clouds])
        inten = np.concatenate([c.intensity for c in clouds])
        labels = None
        if all(c.labels is not None for c in clouds):
            labels = np.concatenate([c.labels for c in clouds])
        return PointCloud(fid, xyz, inten, labels)


@dataclass(frozen=True)
class Box3D:
    """Upright 3D bounding box: center, size, and heading about the z axis.

    Heading is canonical in [-pi/2, pi/2); by convention the longer
    horizontal edge is ``dx``.
    """

    cx: float
    cy: float
    cz: float
    dx: float
    dy: float
    dz: float
    heading: float
    cluster_id: int = 0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.heading)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("box fields must be finite")
        if min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError("box dimensions must be positive")
        if not (-math.pi / 2 <= self.heading < math.pi / 2):
            raise ValueError("heading must lie in [-pi/2, pi/2)")
        if self.cluster_id < 0:
            raise ValueError("cluster_id must be >= 0")

    @property
    def volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def bottom_z(self) -> float:
        return self.cz - self.dz / 2

    @property
    def top_z(self) -> float:
        return self.cz + self.dz / 2

    def bev_corners(self) -> np.ndarray:
        """(4, 2) xy corners, counter-clockwise."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        ex = np.array([c, s]) * (self.dx / 2)
        ey = np.array([-s, c]) * (self.dy / 2)
        ctr = np.array([self.cx, self.cy])
        return np.stack([ctr + ex + ey, ctr - ex + ey, ctr - ex - ey, ctr + ex - ey])

    def corners(self) -> np.ndarray:
        """(8, 3) corners: bottom face then top face."""
        bev = self.bev_corners()
        lo = np.column_stack([bev, np.full(4, self.bottom_z)])
        hi = np.column_stack([bev, np.full(4, self.top_z)])
        return np.concatenate([lo, hi])

    def contains(self, xyz: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside the box, expanded by ``slack``."""
        pts = np.asarray(xyz, dtype=float).reshape(-1, 3)
        d = pts - np.array([self.cx, self.cy, self.cz])
        c, s = math.cos(self.heading), math.sin(self.heading)
        u = d[:, 0] * c + d[:, 1] * s
        v = -d[:, 0] * s + d[:, 1] * c
        return (
            (np.abs(u) <= self.dx / 2 + slack)
            & (np.abs(v) <= self.dy / 2 + slack)
            & (np.abs(d[:, 2]) <= self.dz / 2 + slack)
        )


@dataclass(frozen=True)
class GroundPlane:
    """Plane a*x + b*y + c*z + d = 0 with unit normal and c > 0."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = math.sqrt(self.a**2 + self.b**2 + self.c**2)
        if not math.isfinite(self.d) or not math.isfinite(n):
            raise ValueError("plane coefficients must be finite")
        if abs(n - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        if self.c <= 0:
            raise ValueError("plane normal must point upward (c > 0)")

    @classmethod
    def from_coeffs(cls, a: float, b: float, c: float, d: float) -> "GroundPlane":
        """Normalize and orient arbitrary coefficients."""
        n = math.sqrt(a * a + b * b + c * c)
        if n == 0:
            raise ValueError("degenerate plane")
        a, b, c, d = a / n, b / n, c / n, d / n
        if c < 0:
            a, b, c, d = -a, -b, -c, -d
        return cls(a, b, c, d)

    def signed_distance(self, xyz: np.ndarray) -> np.ndarray:
        pts = np.asarray(xyz, dtype=float).reshape(-1, 3)
        return pts @ np.array([self.a, self.b, self.c]) + self.d

    def height_at(self, x, y):
        """Ground z at planimetric position (x, y)."""
        return -(self.a * np.asarray(x) + self.b * np.asarray(y) + self.d) / self.c


@dataclass(frozen=True)
class GroundModel:
    """Planar ground fit, one plane per concentric range zone.

    ``zone_edges`` are ascending radial boundaries with len(planes) + 1
    entries; the first is 0 and the last is +inf, so every point maps to
    exactly one zone.
    """

    planes: tuple[GroundPlane, ...]
    zone_edges: tuple[float, ...]
    inlier_threshold: float

    def __post_init__(self):
        if not self.planes:
            raise ValueError("at least one plane required")
        if len(self.zone_edges) != len(self.planes) + 1:
            raise ValueError("zone_edges must have len(planes) + 1 entries")
        edges = np.asarray(self.zone_edges, dtype=float)
        if edges[0] != 0 or not np.isposinf(edges[-1]) or (np.diff(edges) <= 0).any():
            raise ValueError("zone_edges must ascend from 0 to +inf")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")

    @classmethod
    def single(cls, plane: GroundPlane, inlier_threshold: float) -> "GroundModel":
        return cls((plane,), (0.0, math.inf), inlier_threshold)

    def zone_index(self, xyz: np.ndarray) -> np.ndarray:
        pts = np.asarray(xyz, dtype=float).reshape(-1, 3)
        r = np.hypot(pts[:, 0], pts[:, 1])
        inner = np.asarray(self.zone_edges[1:-1], dtype=float)
        return np.searchsorted(inner, r, side="right")

    def signed_distance(self, xyz: np.ndarray) -> np.ndarray:
        pts = np.asarray(xyz, dtype=float).reshape(-1, 3)
        zone = self.zone_index(pts)
        out = np.empty(len(pts))
        for zi, plane in enumerate(self.planes):
            m = zone == zi
            if m.any():
                out[m] = plane.signed_distance(pts[m])
        return out

    def height_at(self, x: float, y: float) -> float:
        zone = int(self.zone_index(np.array([[x, y, 0.0]]))[0])
        return float(self.planes[zone].height_at(x, y))


@dataclass(frozen=True)
class LidarConfig:
    """Cylindrical sensor geometry driving range-image re-simulation."""

    name: str
    beams: int
    columns: int
    f_up_deg: float
    f_down_deg: float
    max_range_m: float

    def __post_init__(self):
        if self.beams < 1 or self.columns < 1:
            raise ValueError("beams and columns must be >= 1")
        if not self.f_up_deg > self.f_down_deg:
            raise ValueError("f_up must exceed f_down")
        if not self.max_range_m > 0:
            raise ValueError("max_range must be positive")

    @property
    def f_up_rad(self) -> float:
        return math.radians(self.f_up_deg)

    @property
    def f_down_rad(self) -> float:
        return math.radians(self.f_down_deg)

    @property
    def fov_rad(self) -> float:
        return self.f_up_rad - self.f_down_rad


@dataclass(frozen=True, eq=False)
class RangeImage:
    """H x W range map; 0 marks an empty cell.

    ``point_index`` records which source point won each cell (-1 when empty)
    so downstream code can carry per-point attributes through resampling.
    """

    config: LidarConfig
    range_m: np.ndarray
    intensity: np.ndarray
    point_index: np.ndarray | None = None

    def __post_init__(self):
        shape = (self.config.beams, self.config.columns)
        rng_img = np.array(self.range_m, dtype=np.float64, copy=True)
        int_img = np.array(self.intensity, dtype=np.float64, copy=True)
        if rng_img.shape != shape or int_img.shape != shape:
            raise ValueError(f"grids must have shape {shape}")
        filled = rng_img > 0
        if (rng_img < 0).any() or (rng_img[filled] > self.config.max_range_m).any():
            raise ValueError("non-empty cells must satisfy 0 < range <= max_range")
        rng_img.setflags(write=False)
        int_img.setflags(write=False)
        object.__setattr__(self, "range_m", rng_img)
        object.__setattr__(self, "intensity", int_img)
        if self.point_index is not None:
            pidx = np.array(self.point_index, dtype=np.int64, copy=True)
            if pidx.shape != shape:
                raise ValueError(f"point_index must have shape {shape}")
            pidx.setflags(write=False)
            object.__setattr__(self, "point_index", pidx)

    @property
    def n_points(self) -> int:
        return int((self.range_m > 0).sum())


@dataclass(frozen=True)
class AugRecord:
    """Fully materialized augmentation, replayable onto points and boxes.

    Geometric steps apply in a fixed order: flip -> rotate about z ->
    scale about the origin -> translate -> cuboid drop -> optional beam
    pattern step. ``dropped_cuboids`` are expressed in the output frame.
    ``lidar_config`` names a single-pattern render; ``polarmix_configs`` /
    ``polarmix_sectors`` describe a sector-mixed multi-render, where sector
    i takes its points from render i mod len(configs).
    """

    flip_x: bool = False
    flip_y: bool = False
    rotation_z: float = 0.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0
    dropped_cuboids: tuple[Cuboid, ...] = ()
    lidar_config: str | None = None
    polarmix_configs: tuple[str, ...] = ()
    polarmix_sectors: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if len(self.translation) != 3:
            raise ValueError("translation must be a 3-tuple")
        for lo, hi in self.polarmix_sectors:
            if not (-math.pi - 1e-9 <= lo < hi <= math.pi + 1e-9):
                raise ValueError("sector bounds must satisfy -pi <= lo < hi <= pi")
        if self.lidar_config is not None and self.polarmix_configs:
            raise ValueError("single-pattern and polarmix steps are exclusive")
        if bool(self.polarmix_configs) != bool(self.polarmix_sectors):
            raise ValueError("polarmix configs and sectors must appear together")

    @property
    def has_pattern(self) -> bool:
        return self.lidar_config is not None or bool(self.polarmix_configs)

    def to_dict(self) -> dict:
        return {
            "flip_x": self.flip_x,
            "flip_y": self.flip_y,
            "rotation_z": self.rotation_z,
            "translation": list(self.translation),
            "scale": self.scale,
            "dropped_cuboids": [[list(lo), list(hi)] for lo, hi in self.dropped_cuboids],
            "lidar_config": self.lidar_config,
            "polarmix_configs": list(self.polarmix_configs),
            "polarmix_sectors": [list(s) for s in self.polarmix_sectors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugRecord":
        return cls(
            flip_x=bool(d["flip_x"]),
            flip_y=bool(d["flip_y"]),
            rotation_z=float(d["rotation_z"]),
            translation=tuple(float(v) for v in d["translation"]),
            scale=float(d["scale"]),
            dropped_cuboids=tuple(
                (tuple(map(float, lo)), tuple(map(float, hi)))
                for lo, hi in d["dropped_cuboids"]
            ),
            lidar_config=d.get("lidar_config"),
            polarmix_configs=tuple(d.get("polarmix_configs") or ()),
            polarmix_sectors=tuple(
                (float(lo), float(hi)) for lo, hi in d.get("polarmix_sectors") or ()
            ),
        )
