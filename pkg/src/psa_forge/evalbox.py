"""Pseudo-box quality metrics against reference boxes.

BEV IoU is the area intersection-over-union of the two boxes' rotated
footprint rectangles. Matching is greedy on descending IoU with
deterministic index tie-breaks; precision/recall are micro-averaged over
frames.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from shapely.geometry import Polygon

from .scanio import CacheError, list_cached_frames, read_frame_cache
from .types import Box3D

__all__ = [
    "bev_iou",
    "match_boxes",
    "evaluate_frames",
    "load_truth_boxes",
    "save_truth_boxes",
    "cluster_eval",
    "format_eval_report",
]


def bev_iou(a: Box3D, b: Box3D) -> float:
    pa = Polygon(a.bev_corners())
    pb = Polygon(b.bev_corners())
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return float(inter / union) if union > 0 else 0.0


def match_boxes(pred: Sequence[Box3D], truth: Sequence[Box3D], iou_threshold: float):
    """Greedy one-to-one matching by descending IoU.

    Returns a list of (pred_index, truth_index, iou). Ties resolve to the
    lowest (pred, truth) index pair.
    """
    if not pred or not truth:
        return []
    iou = np.array([[bev_iou(p, t) for t in truth] for p in pred])
    matches = []
    used_p: set[int] = set()
    used_t: set[int] = set()
    order = sorted(
        ((pi, ti) for pi in range(len(pred)) for ti in range(len(truth))),
        key=lambda pt: (-iou[pt[0], pt[1]], pt[0], pt[1]),
    )
    for pi, ti in order:
        if iou[pi, ti] < iou_threshold:
            break
        if pi in used_p or ti in used_t:
            continue
        matches.append((pi, ti, float(iou[pi, ti])))
        used_p.add(pi)
        used_t.add(ti)
    return matches


def evaluate_frames(
    frames: Mapping[str, tuple[Sequence[Box3D], Sequence[Box3D]]],
    thresholds: Sequence[float] = (0.3, 0.5),
) -> dict:
    """Micro-averaged precision/recall and mean 3D center error per threshold."""
    report: dict = {"frames": len(frames), "thresholds": {}}
    for thr in thresholds:
        n_pred = n_truth = n_match = 0
        center_errs: list[float] = []
        for frame_id in sorted(frames):
            pred, truth = frames[frame_id]
            n_pred += len(pred)
            n_truth += len(truth)
            for pi, ti, _ in match_boxes(pred, truth, thr):
                n_match += 1
                p, t = pred[pi], truth[ti]
                center_errs.append(
                    float(np.linalg.norm([p.cx - t.cx, p.cy - t.cy, p.cz - t.cz]))
                )
        report["thresholds"][thr] = {
            "precision": n_match / n_pred if n_pred else 0.0,
            "recall": n_match / n_truth if n_truth else 0.0,
            "matches": n_match,
            "predicted": n_pred,
            "truth": n_truth,
            "mean_center_error_m": float(np.mean(center_errs)) if center_errs else float("nan"),
        }
    return report


def load_truth_boxes(path) -> dict[str, list[Box3D]]:
    """CSV with header frame_id,cx,cy,cz,dx,dy,dz,heading."""
    out: dict[str, list[Box3D]] = {}
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"frame_id", "cx", "cy", "cz", "dx", "dy", "dz", "heading"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise CacheError(f"{path}: truth file must have columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                fid = row["frame_id"]
                boxes = out.setdefault(fid, [])
                boxes.append(
                    Box3D(
                        cx=float(row["cx"]),
                        cy=float(row["cy"]),
                        cz=float(row["cz"]),
                        dx=float(row["dx"]),
                        dy=float(row["dy"]),
                        dz=float(row["dz"]),
                        heading=float(row["heading"]),
                        cluster_id=len(boxes),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise CacheError(f"{path}:{lineno}: {exc}") from exc
    return out


def save_truth_boxes(path, frames: Mapping[str, Sequence[Box3D]]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "cx", "cy", "cz", "dx", "dy", "dz", "heading"])
        for fid in sorted(frames):
            for b in frames[fid]:
                writer.writerow(
                    [fid] + [f"{v:.17g}" for v in (b.cx, b.cy, b.cz, b.dx, b.dy, b.dz, b.heading)]
                )
    return path


def cluster_eval(cache_dir, truth_path, thresholds: Sequence[float] = (0.3, 0.5)) -> dict:
    """Compare a preprocessing cache against a reference box file."""
    truth = load_truth_boxes(truth_path)
    cached = set(list_cached_frames(cache_dir))
    missing = sorted(set(truth) - cached)
    if missing:
        raise CacheError(f"frames missing from cache: {', '.join(missing)}")
    frames = {}
    for fid in sorted(truth):
        boxes, _ = read_frame_cache(cache_dir, fid)
        frames[fid] = (boxes, truth[fid])
    return evaluate_frames(frames, thresholds)


def format_eval_report(report: dict) -> str:
    lines = [f"frames evaluated: {report['frames']}"]
    for thr in sorted(report["thresholds"]):
        r = report["thresholds"][thr]
        lines.append(
            f"iou>={thr:.2f}: precision {r['precision']:.4f} "
            f"recall {r['recall']:.4f} matches {r['matches']} "
            f"(pred {r['predicted']}, truth {r['truth']}) "
            f"center error {r['mean_center_error_m']:.4f} m"
        )
    return "\n".join(lines) + "\n"
