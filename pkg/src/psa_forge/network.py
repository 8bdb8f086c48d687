"""Toy per-point encoder, heads, and exact analytic gradients.

The encoder is a per-point MLP with tanh hidden activations (smooth
everywhere, which keeps finite-difference gradient checks tight) and a
linear output. Two heads read the point features: a box-offset regression
MLP applied to the concatenated features of both views, and a linear
projection feeding the pooled contrastive embeddings. The key side runs a
momentum copy of the encoder and projection and never receives gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import LossBreakdown, LossConfig, combined_loss, infonce_with_grad, pool_with_argmax, smooth_l1_with_grad
from .rng import SeededRng
from .targets import RegressionTarget
from .types import PointCloud

__all__ = [
    "TrainConfig",
    "EncoderParams",
    "TrainSample",
    "SgdOptimizer",
    "init_params",
    "momentum_update",
    "point_inputs",
    "encoder_forward",
    "regression_forward",
    "forward_backward",
    "sgd_step",
]

ENC_LAYERS = ("enc0", "enc1", "enc2")
REG_LAYERS = ("reg0", "reg1", "reg2")
PROJ_LAYERS = ("proj",)
# Tensors mirrored into the momentum copy (the regression head is query-only).
MOMENTUM_PREFIXES = ("enc", "proj")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.12
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 2
    iterations: int = 300

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size >= 1 and iterations >= 0 required")


@dataclass
class EncoderParams:
    """Query tensors plus the momentum copy of encoder and projection."""

    query: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray]
    use_intensity: bool = True
    input_scale: float = 0.05

    def apply_momentum(self, m: float) -> None:
        self.momentum = momentum_update(self.query, self.momentum, m)

    @property
    def proj_dim(self) -> int:
        return self.query["proj_w"].shape[1]


def _linear_init(rng: SeededRng, fan_in: int, fan_out: int):
    w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))
    return w, np.zeros(fan_out)


def init_params(
    rng: SeededRng,
    hidden: tuple[int, int] = (64, 64),
    feature_dim: int = 32,
    reg_hidden: tuple[int, int] = (256, 256),
    proj_dim: int = 32,
    use_intensity: bool = True,
    input_scale: float = 0.05,
) -> EncoderParams:
    din = 4 if use_intensity else 3
    sizes = {
        "enc0": (din, hidden[0]),
        "enc1": (hidden[0], hidden[1]),
        "enc2": (hidden[1], feature_dim),
        "reg0": (feature_dim, reg_hidden[0]),
        "reg1": (reg_hidden[0], reg_hidden[1]),
        "reg2": (reg_hidden[1], 7),
        "proj": (feature_dim, proj_dim),
    }
    query: dict[str, np.ndarray] = {}
    for i, name in enumerate(sizes):
        w, b = _linear_init(rng.child(i), *sizes[name])
        query[f"{name}_w"] = w
        query[f"{name}_b"] = b
    momentum = {
        k: v.copy() for k, v in query.items() if k.startswith(MOMENTUM_PREFIXES)
    }
    return EncoderParams(query, momentum, use_intensity, input_scale)


def momentum_update(params_q: dict, params_k: dict, m: float) -> dict:
    """theta_k <- m * theta_k + (1 - m) * theta_q, elementwise."""
    if not 0 <= m <= 1:
        raise ValueError("m must lie in [0, 1]")
    out = {}
    for key, k_val in params_k.items():
        q_val = params_q[key]
        if q_val.shape != k_val.shape:
            raise ValueError(f"shape mismatch for {key}")
        out[key] = m * k_val + (1.0 - m) * q_val
    return out


def point_inputs(params: EncoderParams, cloud: PointCloud) -> np.ndarray:
    cols = [cloud.xyz]
    if params.use_intensity:
        cols.append(cloud.intensity[:, None])
    return np.concatenate(cols, axis=1) * params.input_scale


def _mlp_forward(tensors: dict, layers, x: np.ndarray):
    """Hidden layers tanh, final layer linear. Returns (out, caches)."""
    caches = []
    for i, name in enumerate(layers):
        z = x @ tensors[f"{name}_w"] + tensors[f"{name}_b"]
        last = i == len(layers) - 1
        a = z if last else np.tanh(z)
        caches.append((x, a, last))
        x = a
    return x, caches


def _mlp_backward(tensors: dict, layers, caches, dy: np.ndarray, grads: dict) -> np.ndarray:
    for name, (x, a, last) in zip(reversed(layers), reversed(caches)):
        dz = dy if last else dy * (1.0 - a * a)
        grads[f"{name}_w"] += x.T @ dz
        grads[f"{name}_b"] += dz.sum(axis=0)
        dy = dz @ tensors[f"{name}_w"].T
    return dy


def encoder_forward(params: EncoderParams, cloud: PointCloud, side: str = "query"):
    tensors = params.query if side == "query" else params.momentum
    return _mlp_forward(tensors, ENC_LAYERS, point_inputs(params, cloud))


def regression_forward(params: EncoderParams, feats: np.ndarray):
    return _mlp_forward(params.query, REG_LAYERS, feats)


@dataclass
class TrainSample:
    """One frame's two augmented views with their regression targets."""

    view_q: PointCloud
    view_k: PointCloud
    target_q: RegressionTarget
    target_k: RegressionTarget


def _normalize_rows(u: np.ndarray):
    n = np.linalg.norm(u, axis=1, keepdims=True)
    n = np.maximum(n, 1e-12)
    return u / n, n


def forward_backward(
    params: EncoderParams,
    batch,
    cfg: LossConfig,
    mode: str = "cluster",
    queue: np.ndarray | None = None,
):
    """Joint loss and exact gradients for the query-side tensors.

    Regression scores the concatenated point features of both views, each
    view against its own targets, averaged over all valid points in the
    batch. The contrastive term pools features (per common cluster id, or
    per scene; cluster mode falls back to scene pooling for samples
    without common clusters), projects, normalizes, and contrasts against
    the negatives queue. Returns (breakdown, grads, key_rows) where
    key_rows are this batch's pooled momentum embeddings for queue update.

    Raises FloatingPointError naming the offending term if a loss is not
    finite.
    """
    if queue is None:
        queue = np.zeros((0, params.proj_dim))
    grads = {k: np.zeros_like(v) for k, v in params.query.items()}

    per_sample = []
    total_valid = 0
    for sample in batch:
        info = {"sample": sample}
        nq, nk = len(sample.view_q), len(sample.view_k)
        info["nq"], info["nk"] = nq, nk
        # The regression loss covers clustered points only, so the head
        # runs on the valid rows of each view's features.
        if nq:
            fq, enc_cache = _mlp_forward(params.query, ENC_LAYERS, point_inputs(params, sample.view_q))
            pq, regq_cache = _mlp_forward(params.query, REG_LAYERS, fq[sample.target_q.valid])
            info.update(fq=fq, enc_cache=enc_cache, pq=pq, regq_cache=regq_cache)
            total_valid += sample.target_q.n_valid
        if nk:
            fk, _ = _mlp_forward(params.momentum, ENC_LAYERS, point_inputs(params, sample.view_k))
            pk, regk_cache = _mlp_forward(params.query, REG_LAYERS, fk[sample.target_k.valid])
            info.update(fk=fk, pk=pk, regk_cache=regk_cache)
            total_valid += sample.target_k.n_valid
        per_sample.append(info)

    # Contrastive rows across the whole batch, in sample order.
    z_rows, y_rows = [], []
    for info in per_sample:
        if not (info["nq"] and info["nk"]):
            continue
        sample = info["sample"]
        pool_mode = mode
        common = np.zeros(0, dtype=np.int64)
        if mode == "cluster":
            lq, lk = sample.view_q.labels, sample.view_k.labels
            if lq is not None and lk is not None:
                common = np.intersect1d(lq[lq >= 0], lk[lk >= 0])
            if len(common) == 0:
                pool_mode = "scene"  # keep a training signal for cluster-free frames
        if pool_mode == "cluster":
            # Positive pairs are the cluster ids present in both views,
            # aligned by sorted id.
            rows_q, ids_q, am_q = pool_with_argmax(info["fq"], lq, "cluster")
            rows_k, ids_k, _ = pool_with_argmax(info["fk"], lk, "cluster")
            sel_q = np.isin(ids_q, common)
            sel_k = np.isin(ids_k, common)
            rows_q, am_q = rows_q[sel_q], am_q[sel_q]
            rows_k = rows_k[sel_k]
        else:
            rows_q, _, am_q = pool_with_argmax(info["fq"], None, "scene")
            rows_k, _, _ = pool_with_argmax(info["fk"], None, "scene")
        uq = rows_q @ params.query["proj_w"] + params.query["proj_b"]
        zq, norm_q = _normalize_rows(uq)
        uk = rows_k @ params.momentum["proj_w"] + params.momentum["proj_b"]
        zk, _ = _normalize_rows(uk)
        info.update(rows_q=rows_q, am_q=am_q, uq=uq, zq=zq, norm_q=norm_q)
        z_rows.append(zq)
        y_rows.append(zk)

    if z_rows:
        z = np.concatenate(z_rows)
        y = np.concatenate(y_rows)
        l_con, dz = infonce_with_grad(z, y, queue, cfg.tau)
        key_rows = y
    else:
        l_con = 0.0
        dz = None
        key_rows = np.zeros((0, params.proj_dim))
    if not np.isfinite(l_con):
        raise FloatingPointError("contrastive loss is not finite")

    # Regression loss over the concatenated views, averaged over all valid
    # points of the batch (fixed sample order).
    l_reg = 0.0
    for info in per_sample:
        sample = info["sample"]
        for key, tgt in (("pq", sample.target_q), ("pk", sample.target_k)):
            if key not in info or total_valid == 0:
                info[f"d{key}"] = None
                continue
            x = info[key] - tgt.values[tgt.valid]
            small = np.abs(x) < 1.0
            l_reg += float(np.where(small, 0.5 * x * x, np.abs(x) - 0.5).sum())
            info[f"d{key}"] = np.where(small, x, np.sign(x)) * (cfg.beta2 / total_valid)
    if total_valid:
        l_reg /= total_valid
    if not np.isfinite(l_reg):
        raise FloatingPointError("regression loss is not finite")

    breakdown = combined_loss(l_con, l_reg, cfg)

    # Backward pass, samples in order.
    offset = 0
    for info in per_sample:
        dfq = np.zeros_like(info["fq"]) if info["nq"] else None
        if info.get("dpq") is not None:
            dvalid = _mlp_backward(params.query, REG_LAYERS, info["regq_cache"], info["dpq"], grads)
            dfq[info["sample"].target_q.valid] += dvalid
        if info.get("dpk") is not None:
            # Momentum features are constants; keep only head gradients.
            _mlp_backward(params.query, REG_LAYERS, info["regk_cache"], info["dpk"], grads)
        if dz is not None and "zq" in info:
            rows = len(info["zq"])
            dzq = dz[offset : offset + rows] * cfg.beta1
            offset += rows
            # Through row normalization: du = (dz - z (z . dz)) / ||u||.
            zq = info["zq"]
            du = (dzq - zq * (zq * dzq).sum(axis=1, keepdims=True)) / info["norm_q"]
            grads["proj_w"] += info["rows_q"].T @ du
            grads["proj_b"] += du.sum(axis=0)
            dpool = du @ params.query["proj_w"].T
            cols = np.broadcast_to(np.arange(dpool.shape[1]), info["am_q"].shape)
            np.add.at(dfq, (info["am_q"], cols), dpool)
        if dfq is not None:
            _mlp_backward(params.query, ENC_LAYERS, info["enc_cache"], dfq, grads)

    return breakdown, grads, key_rows


@dataclass
class SgdOptimizer:
    """SGD with classical momentum and coupled weight decay.

    v <- momentum * v + (g + wd * theta); theta <- theta - lr * v.
    """

    cfg: TrainConfig
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for key, theta in params.items():
            g = grads[key] + self.cfg.weight_decay * theta
            v = self.velocity.get(key)
            v = g if v is None else self.cfg.sgd_momentum * v + g
            self.velocity[key] = v
            out[key] = theta - self.cfg.learning_rate * v
        return out


def sgd_step(params: dict, grads: dict, cfg: TrainConfig, velocity: dict | None = None):
    """Functional single step; returns (new_params, velocity)."""
    opt = SgdOptimizer(cfg, velocity if velocity is not None else {})
    new_params = opt.step(params, grads)
    return new_params, opt.velocity
