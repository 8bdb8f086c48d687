"""Loss primitives: smooth L1, feature pooling, InfoNCE, and the weighted
combination used for pretraining.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "DEFAULT_TAU",
    "smooth_l1",
    "smooth_l1_with_grad",
    "pool_features",
    "pool_with_argmax",
    "infonce",
    "infonce_with_grad",
    "combined_loss",
]

# Temperature defaults per contrastive granularity.
DEFAULT_TAU = {"scene": 0.1, "cluster": 0.04}


@dataclass(frozen=True)
class LossConfig:
    """Weights and constants of the joint objective."""

    beta1: float = 1.0
    beta2: float = 0.5
    tau: float = 0.1
    momentum_m: float = 0.999
    queue_size: int = 4096
    anchor_dim: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0 <= self.momentum_m <= 1:
            raise ValueError("momentum_m must lie in [0, 1]")
        if self.queue_size < 0:
            raise ValueError("queue_size must be >= 0")
        if self.anchor_dim <= 0:
            raise ValueError("anchor_dim must be positive")

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "LossConfig":
        if mode not in DEFAULT_TAU:
            raise ValueError(f"unknown mode {mode!r}")
        overrides.setdefault("tau", DEFAULT_TAU[mode])
        return cls(**overrides)


@dataclass(frozen=True)
class LossBreakdown:
    contrastive: float
    regression: float
    total: float


def combined_loss(l_con: float, l_reg: float, cfg: LossConfig) -> LossBreakdown:
    """total = beta1 * contrastive + beta2 * regression."""
    if not (np.isfinite(l_con) and np.isfinite(l_reg)):
        raise ValueError("loss terms must be finite")
    return LossBreakdown(float(l_con), float(l_reg), cfg.beta1 * l_con + cfg.beta2 * l_reg)


def smooth_l1(pred, target, valid) -> float:
    loss, _ = smooth_l1_with_grad(pred, target, valid)
    return loss


def smooth_l1_with_grad(pred, target, valid):
    """Smooth L1 summed over components, averaged over valid rows.

    f(x) = 0.5 x^2 for |x| < 1 else |x| - 0.5; returns (loss, dloss/dpred).
    Zero valid rows give (0, zeros).
    """
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    v = np.asarray(valid, dtype=bool)
    if p.shape != t.shape or len(v) != len(p):
        raise ValueError("shape mismatch")
    grad = np.zeros_like(p)
    n = int(v.sum())
    if n == 0:
        return 0.0, grad
    x = p[v] - t[v]
    small = np.abs(x) < 1.0
    per = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    grad_rows = np.where(small, x, np.sign(x)) / n
    grad[v] = grad_rows
    return float(per.sum() / n), grad


def pool_features(feats, labels, mode: str):
    """Componentwise max pooling.

    cluster mode: one row per cluster id (ids sorted ascending); points
    labeled -1 are ignored and an all-noise input yields empty output.
    scene mode: a single row over every point. Returns (rows, ids); scene
    ids are [0].
    """
    rows, ids, _ = pool_with_argmax(feats, labels, mode)
    return rows, ids


def pool_with_argmax(feats, labels, mode: str):
    """Max pooling that also reports winner indices for gradient routing."""
    f = np.asarray(feats, dtype=float)
    if f.ndim != 2:
        raise ValueError("feats must be 2-d")
    if mode == "scene":
        if len(f) == 0:
            return np.zeros((0, f.shape[1])), np.zeros(0, dtype=np.int64), np.zeros((0, f.shape[1]), dtype=np.int64)
        am = f.argmax(axis=0)
        return f.max(axis=0, keepdims=True), np.zeros(1, dtype=np.int64), am[None, :]
    if mode != "cluster":
        raise ValueError(f"unknown mode {mode!r}")
    lab = np.asarray(labels)
    if len(lab) != len(f):
        raise ValueError("labels must align with feats")
    ids = np.unique(lab[lab >= 0]) if len(lab) else np.zeros(0, dtype=np.int64)
    rows = np.zeros((len(ids), f.shape[1]))
    argmax = np.zeros((len(ids), f.shape[1]), dtype=np.int64)
    for i, cid in enumerate(ids):
        sel = np.nonzero(lab == cid)[0]
        sub = f[sel]
        am = sub.argmax(axis=0)
        rows[i] = sub[am, np.arange(f.shape[1])]
        argmax[i] = sel[am]
    return rows, ids.astype(np.int64), argmax


def infonce(q_rows, k_rows, negatives, tau: float) -> float:
    loss, _ = infonce_with_grad(q_rows, k_rows, negatives, tau)
    return loss


def infonce_with_grad(q_rows, k_rows, negatives, tau: float):
    """Softmax cross-entropy over one positive and the negative queue.

    mean_i of -log( exp(q_i.k_i / tau) / (exp(q_i.k_i / tau)
    + sum_j exp(q_i.n_j / tau)) ). Rows are expected unit-norm. Returns
    (loss, dloss/dq_rows); k and queue rows receive no gradient. Empty
    positives give 0 with a warning.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    q = np.asarray(q_rows, dtype=float)
    k = np.asarray(k_rows, dtype=float)
    neg = np.asarray(negatives, dtype=float).reshape(-1, q.shape[-1] if q.size else 0)
    if q.shape != k.shape:
        raise ValueError("q and k rows must align")
    if len(q) == 0:
        warnings.warn("infonce called with no positive pairs", RuntimeWarning, stacklevel=2)
        return 0.0, np.zeros_like(q)
    pos = (q * k).sum(axis=1, keepdims=True)
    logits = np.concatenate([pos, q @ neg.T], axis=1) / tau
    m = logits.max(axis=1, keepdims=True)
    expv = np.exp(logits - m)
    z = expv.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(z)[:, 0] + m[:, 0] - logits[:, 0]))
    p = expv / z
    dlogits = p.copy()
    dlogits[:, 0] -= 1.0
    dlogits /= len(q) * tau
    dq = dlogits[:, :1] * k + dlogits[:, 1:] @ neg
    return loss, dq
