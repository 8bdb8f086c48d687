"""psa-forge: deterministic pseudo-box pretraining pipeline for LiDAR scans.

Building blocks: scan and cache IO, zoned RANSAC ground splitting, density
clustering, heading-search box fitting, two-view augmentation with
beam-pattern re-simulation, and exact loss math for a desk-scale joint
contrastive + box-regression training loop.
"""

from .augment import AugRanges, ViewPair, apply_to_boxes, apply_to_points, make_views, sample_aug
from .beamsim import polarmix, project, resample_pattern, sample_config, unproject
from .boxfit import FilterParams, PipelineParams, commonsense_filter, generate_pseudo_boxes, lshape_fit
from .cluster import EPS_PRESETS, dbscan, filter_small_clusters, hdbscan
from .config import DefaultsBundle, default_bundle
from .ground import GroundParams, NoGroundError, fit_ground, split_ground
from .losses import LossBreakdown, LossConfig, combined_loss, infonce, pool_features, smooth_l1
from .network import EncoderParams, TrainConfig, forward_backward, init_params, momentum_update, sgd_step
from .rng import SeededRng
from .scanio import (
    DEFAULT_CONFIG_PROBS,
    default_profiles,
    load_lidar_profiles,
    read_frame_cache,
    read_scan,
    write_frame_cache,
    write_scan,
)
from .targets import RegressionTarget, decode_box, encode_targets
from .train import pretrain
from .types import AugRecord, Box3D, GroundModel, GroundPlane, LidarConfig, Point, PointCloud, RangeImage

__version__ = "0.1.0"
