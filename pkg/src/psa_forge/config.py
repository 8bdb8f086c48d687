"""Aggregated default configuration with a JSON round trip.

The bundle is built from the live defaults of the individual modules (loss
weights, optimizer settings, clustering presets, sampling probabilities),
so serializing and reloading it verifies the operative defaults rather
than a parallel copy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .beamsim import POLARMIX_CROP_DEG, POLARMIX_RENDERS
from .boxfit import PipelineParams
from .cluster import EPS_PRESETS
from .losses import DEFAULT_TAU, LossConfig
from .network import TrainConfig
from .scanio import DEFAULT_CONFIG_PROBS

__all__ = ["DefaultsBundle", "default_bundle"]


@dataclass(frozen=True)
class DefaultsBundle:
    beta1: float
    beta2: float
    tau_scene: float
    tau_cluster: float
    anchor_dim: float
    momentum_m: float
    queue_size: int
    config_probs: tuple[float, ...]
    polarmix_renders: int
    polarmix_crop_deg: tuple[float, float]
    min_cluster_size: int
    eps_presets: dict[str, float]
    sgd_momentum: float
    learning_rate: float
    weight_decay: float

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_json(cls, path) -> "DefaultsBundle":
        d = json.loads(Path(path).read_text())
        d["config_probs"] = tuple(d["config_probs"])
        d["polarmix_crop_deg"] = tuple(d["polarmix_crop_deg"])
        return cls(**d)


def default_bundle() -> DefaultsBundle:
    loss = LossConfig()
    train = TrainConfig()
    return DefaultsBundle(
        beta1=loss.beta1,
        beta2=loss.beta2,
        tau_scene=DEFAULT_TAU["scene"],
        tau_cluster=DEFAULT_TAU["cluster"],
        anchor_dim=loss.anchor_dim,
        momentum_m=loss.momentum_m,
        queue_size=loss.queue_size,
        config_probs=DEFAULT_CONFIG_PROBS,
        polarmix_renders=POLARMIX_RENDERS,
        polarmix_crop_deg=POLARMIX_CROP_DEG,
        min_cluster_size=PipelineParams.min_cluster_size,
        eps_presets=dict(EPS_PRESETS),
        sgd_momentum=train.sgd_momentum,
        learning_rate=train.learning_rate,
        weight_decay=train.weight_decay,
    )
