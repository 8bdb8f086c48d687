"""Desk-scale pretraining loop: two-view batches, joint loss, SGD with a
momentum encoder and a FIFO queue of key embeddings.

The random stream splits are fixed so runs are bit-reproducible: child 0
initializes parameters, child 1 fills the queue, child (2, it) drives
iteration ``it`` and frame b within it uses child (2, it, b).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augment import AugRanges, make_views
from .losses import LossBreakdown, LossConfig
from .network import EncoderParams, SgdOptimizer, TrainConfig, TrainSample, forward_backward, init_params, _mlp_forward, ENC_LAYERS, REG_LAYERS, point_inputs
from .rng import SeededRng
from .targets import decode_box, encode_targets
from .types import Box3D, LidarConfig, PointCloud

__all__ = [
    "FeatureQueue",
    "PretrainResult",
    "pretrain",
    "predict_boxes",
    "eval_center_error",
    "save_params",
    "load_params",
    "write_trace_csv",
]


class FeatureQueue:
    """Fixed-size FIFO of key embeddings, pre-filled with unit noise rows."""

    def __init__(self, rng: SeededRng, size: int, dim: int):
        rows = rng.normal(0.0, 1.0, (size, dim))
        norms = np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), 1e-12)
        self.rows = rows / norms
        self._ptr = 0

    def push(self, keys: np.ndarray) -> None:
        for row in keys:
            if len(self.rows) == 0:
                return
            self.rows[self._ptr] = row
            self._ptr = (self._ptr + 1) % len(self.rows)


@dataclass
class PretrainResult:
    params: EncoderParams
    trace: list[LossBreakdown]
    metrics: dict


def pretrain(
    frames: Sequence[tuple[PointCloud, Sequence[Box3D]]],
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    seed: int,
    mode: str = "cluster",
    pattern_mode: str = "single_pattern",
    ranges: AugRanges = AugRanges(),
    profiles: Mapping[str, LidarConfig] | None = None,
    probs: Sequence[float] | None = None,
    heldout: Sequence[tuple[PointCloud, Sequence[Box3D]]] | None = None,
) -> PretrainResult:
    """Train the toy encoder on labeled frames; deterministic per seed.

    ``frames`` are (cloud with labels, boxes) pairs, typically the
    preprocessing output. The momentum copy updates after every step and
    the key queue advances FIFO.
    """
    if not frames:
        raise ValueError("no training frames")
    rng = SeededRng(seed)
    params = init_params(rng.child(0))
    queue = FeatureQueue(rng.child(1), loss_cfg.queue_size, params.proj_dim)
    opt = SgdOptimizer(train_cfg)
    trace: list[LossBreakdown] = []
    for it in range(train_cfg.iterations):
        r_it = rng.child(2, it)
        idxs = r_it.integers(0, len(frames), train_cfg.batch_size)
        batch = []
        for b, fi in enumerate(idxs):
            cloud, boxes = frames[int(fi)]
            vp = make_views(
                cloud,
                boxes,
                r_it.child(b),
                mode=pattern_mode,
                ranges=ranges,
                profiles=profiles,
                probs=probs,
            )
            batch.append(
                TrainSample(
                    vp.view_q,
                    vp.view_k,
                    encode_targets(vp.view_q, vp.boxes_q, loss_cfg.anchor_dim),
                    encode_targets(vp.view_k, vp.boxes_k, loss_cfg.anchor_dim),
                )
            )
        breakdown, grads, keys = forward_backward(params, batch, loss_cfg, mode, queue.rows)
        params.query = opt.step(params.query, grads)
        params.apply_momentum(loss_cfg.momentum_m)
        queue.push(keys)
        trace.append(breakdown)

    metrics = _window_metrics(trace)
    if heldout:
        metrics["heldout_center_error_m"] = eval_center_error(params, heldout, loss_cfg.anchor_dim)
    return PretrainResult(params, trace, metrics)


def _window_metrics(trace: list[LossBreakdown], window: int = 30) -> dict:
    if not trace:
        return {}
    w = min(window, len(trace))
    first = float(np.mean([t.total for t in trace[:w]]))
    last = float(np.mean([t.total for t in trace[-w:]]))
    return {
        "iterations": len(trace),
        "first_window_mean": first,
        "final_window_mean": last,
        "final_over_first": last / first if first else float("nan"),
    }


def predict_boxes(params: EncoderParams, cloud: PointCloud, anchor_dim: float = 1.0) -> list[Box3D]:
    """Decode one box per labeled cluster by averaging per-point decodes."""
    if cloud.labels is None:
        return []
    feats, _ = _mlp_forward(params.query, ENC_LAYERS, point_inputs(params, cloud))
    preds, _ = _mlp_forward(params.query, REG_LAYERS, feats)
    out = []
    for cid in np.unique(cloud.labels[cloud.labels >= 0]):
        rows = np.nonzero(cloud.labels == cid)[0]
        decoded = [decode_box(cloud.xyz[i], preds[i], anchor_dim, int(cid)) for i in rows]
        ctr = np.mean([[b.cx, b.cy, b.cz] for b in decoded], axis=0)
        sizes = np.exp(np.mean(np.log([[b.dx, b.dy, b.dz] for b in decoded]), axis=0))
        heading = float(np.median([b.heading for b in decoded]))
        out.append(
            Box3D(*map(float, ctr), *map(float, sizes), heading=heading, cluster_id=int(cid))
        )
    return out


def eval_center_error(params: EncoderParams, scenes, anchor_dim: float = 1.0) -> float:
    """Mean 3D center error of decoded boxes against reference boxes."""
    errs = []
    for cloud, boxes in scenes:
        by_id = {b.cluster_id: b for b in boxes}
        for pred in predict_boxes(params, cloud, anchor_dim):
            ref = by_id.get(pred.cluster_id)
            if ref is None:
                continue
            errs.append(
                float(np.linalg.norm([pred.cx - ref.cx, pred.cy - ref.cy, pred.cz - ref.cz]))
            )
    return float(np.mean(errs)) if errs else float("nan")


def save_params(path, params: EncoderParams) -> Path:
    path = Path(path)
    payload = {f"q/{k}": v for k, v in params.query.items()}
    payload.update({f"m/{k}": v for k, v in params.momentum.items()})
    payload["meta/use_intensity"] = np.array(int(params.use_intensity))
    payload["meta/input_scale"] = np.array(params.input_scale)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_params(path) -> EncoderParams:
    with np.load(path) as data:
        query = {k[2:]: data[k].copy() for k in data.files if k.startswith("q/")}
        momentum = {k[2:]: data[k].copy() for k in data.files if k.startswith("m/")}
        use_intensity = bool(int(data["meta/use_intensity"]))
        input_scale = float(data["meta/input_scale"])
    return EncoderParams(query, momentum, use_intensity, input_scale)


def write_trace_csv(path, trace: Sequence[LossBreakdown]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "l_con", "l_reg", "total"])
        for i, t in enumerate(trace):
            writer.writerow([i, f"{t.contrastive:.17g}", f"{t.regression:.17g}", f"{t.total:.17g}"])
    return path
