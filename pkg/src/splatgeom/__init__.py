"""Semantic-aware geometry tools for Gaussian splat clouds."""

from .errors import SplatGeomError
from .extraction import Aabb, PointCloud, chamfer, crop, density, mean_extraction, sample_points
from .semantics import aggregate_perplexity, assign_labels, target_shape
from .shape_training import LossWeights, PenaltyConfig, fit_shapes, gc_loss, total_loss
from .splat_model import (ActivatedCloud, GaussianSplat, SplatCloud, SplatRaw, activate,
                          activate_cloud, aspect_ratios, parse_splat_ply, write_splat_ply)

__version__ = "0.1.0"
