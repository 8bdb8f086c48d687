"""On-disk formats: binary scans, frame caches, and sensor profiles.

Scans follow the 16-byte-stride convention: consecutive little-endian
float32 quadruples (x, y, z, intensity). The frame cache stores boxes as
line-oriented CSV text (human-inspectable) and labels as little-endian
int32 (compact). Sensor profiles are a JSON list of objects.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .types import Box3D, LidarConfig, PointCloud

__all__ = [
    "MalformedScanError",
    "CacheError",
    "ProfileError",
    "read_scan",
    "write_scan",
    "write_frame_cache",
    "read_frame_cache",
    "list_cached_frames",
    "load_lidar_profiles",
    "save_lidar_profiles",
    "default_profiles",
    "DEFAULT_CONFIG_PROBS",
]

_STRIDE = 16  # four little-endian float32 per point

# Default sampling weights over the default profile registry order
# (v32, v64, o64).
DEFAULT_CONFIG_PROBS = (0.6, 0.2, 0.2)

# Representative public 32- and 64-beam sensor geometries. These are
# configuration data shipped for convenience and freely overridable via a
# profile file; nothing downstream assumes these exact numbers.
_DEFAULT_PROFILE_SPECS = (
    ("v32", 32, 1080, 10.67, -30.67, 100.0),
    ("v64", 64, 2048, 2.0, -24.9, 120.0),
    ("o64", 64, 1024, 16.6, -16.6, 120.0),
)

_PROFILE_FIELDS = ("name", "H", "W", "f_up_deg", "f_down_deg", "max_range_m")


class MalformedScanError(ValueError):
    """Scan byte length is not a multiple of the 16-byte point stride."""


class CacheError(ValueError):
    """Frame cache entry is missing or unparsable."""


class ProfileError(ValueError):
    """Sensor profile file is invalid."""


def read_scan(path) -> PointCloud:
    """Parse a binary scan; point order is preserved.

    Intensity is normalized into [0, 1] by dividing by the frame maximum
    when the raw maximum exceeds 1.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % _STRIDE != 0:
        raise MalformedScanError(
            f"{path}: length {len(raw)} is not a multiple of {_STRIDE}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    intensity = data[:, 3]
    if len(intensity) and intensity.max() > 1.0:
        intensity = intensity / intensity.max()
    return PointCloud(path.stem, data[:, :3], intensity)


def write_scan(path, cloud: PointCloud) -> Path:
    path = Path(path)
    data = np.column_stack([cloud.xyz, cloud.intensity]).astype("<f4")
    path.write_bytes(data.tobytes())
    return path


def _box_dir(cache_dir) -> Path:
    return Path(cache_dir) / "boxes"


def _label_dir(cache_dir) -> Path:
    return Path(cache_dir) / "labels"


def write_frame_cache(frame_id: str, boxes, labels, cache_dir) -> tuple[Path, Path]:
    """Persist one frame's pseudo-boxes and per-point labels.

    Box records are one CSV row per box, fields
    (cluster_id, cx, cy, cz, dx, dy, dz, heading), floats printed with 17
    significant digits so the round-trip is exact.
    """
    box_path = _box_dir(cache_dir) / f"{frame_id}.txt"
    label_path = _label_dir(cache_dir) / f"{frame_id}.lbl"
    box_path.parent.mkdir(parents=True, exist_ok=True)
    label_path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for b in boxes:
        fields = (b.cx, b.cy, b.cz, b.dx, b.dy, b.dz, b.heading)
        lines.append(",".join([str(b.cluster_id)] + [f"{v:.17g}" for v in fields]))
    box_path.write_text("".join(line + "\n" for line in lines))
    np.asarray(labels, dtype="<i4").tofile(label_path)
    return box_path, label_path


def read_frame_cache(cache_dir, frame_id: str) -> tuple[list[Box3D], np.ndarray]:
    box_path = _box_dir(cache_dir) / f"{frame_id}.txt"
    label_path = _label_dir(cache_dir) / f"{frame_id}.lbl"
    if not box_path.exists() or not label_path.exists():
        raise CacheError(f"frame {frame_id!r} not found under {cache_dir}")
    boxes = []
    for lineno, line in enumerate(box_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise CacheError(f"{box_path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            cid = int(parts[0])
            vals = [float(p) for p in parts[1:]]
            boxes.append(Box3D(*vals[:6], heading=vals[6], cluster_id=cid))
        except ValueError as exc:
            raise CacheError(f"{box_path}:{lineno}: {exc}") from exc
    labels = np.fromfile(label_path, dtype="<i4").astype(np.int32)
    return boxes, labels


def list_cached_frames(cache_dir) -> list[str]:
    d = _box_dir(cache_dir)
    if not d.is_dir():
        return []
    return sorted(p.stem for p in d.glob("*.txt"))


def load_lidar_profiles(path) -> dict[str, LidarConfig]:
    """Load named sensor profiles from a JSON list.

    Every entry must carry exactly the fields
    name/H/W/f_up_deg/f_down_deg/max_range_m; unknown fields and duplicate
    names are rejected.
    """
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise ProfileError(f"{path}: expected a JSON list of profiles")
    out: dict[str, LidarConfig] = {}
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ProfileError(f"{path}: entry {i} is not an object")
        unknown = set(entry) - set(_PROFILE_FIELDS)
        if unknown:
            raise ProfileError(f"{path}: entry {i} has unknown fields {sorted(unknown)}")
        missing = set(_PROFILE_FIELDS) - set(entry)
        if missing:
            raise ProfileError(f"{path}: entry {i} is missing fields {sorted(missing)}")
        name = str(entry["name"])
        if name in out:
            raise ProfileError(f"{path}: duplicate profile name {name!r}")
        try:
            cfg = LidarConfig(
                name=name,
                beams=int(entry["H"]),
                columns=int(entry["W"]),
                f_up_deg=float(entry["f_up_deg"]),
                f_down_deg=float(entry["f_down_deg"]),
                max_range_m=float(entry["max_range_m"]),
            )
        except ValueError as exc:
            raise ProfileError(f"{path}: entry {i} ({name!r}): {exc}") from exc
        out[name] = cfg
    return out


def save_lidar_profiles(path, profiles) -> Path:
    path = Path(path)
    entries = [
        {
            "name": c.name,
            "H": c.beams,
            "W": c.columns,
            "f_up_deg": c.f_up_deg,
            "f_down_deg": c.f_down_deg,
            "max_range_m": c.max_range_m,
        }
        for c in (profiles.values() if isinstance(profiles, dict) else profiles)
    ]
    path.write_text(json.dumps(entries, indent=2) + "\n")
    return path


def default_profiles() -> dict[str, LidarConfig]:
    """Built-in v32 / v64 / o64 profile registry, in sampling order."""
    out = {}
    for name, h, w, fu, fd, mr in _DEFAULT_PROFILE_SPECS:
        out[name] = LidarConfig(name, h, w, fu, fd, mr)
    return out
