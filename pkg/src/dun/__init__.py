"""Depth-uncertainty networks with exact categorical depth posteriors.

A feed-forward network is read as a family of subnetworks of depth 0..D that
share weights. Depth is a categorical random variable; a single forward pass
yields per-depth predictions, the marginal likelihood, the evidence lower
bound, and a depth-marginalized predictive distribution.
"""

from dun.blocks import ArchitectureConfig
from dun.model import DepthDistribution, DunModel, build_dun, forward_all_depths, predict_marginal, subnetwork_forward

__all__ = [
    "ArchitectureConfig",
    "DepthDistribution",
    "DunModel",
    "build_dun",
    "forward_all_depths",
    "predict_marginal",
    "subnetwork_forward",
]
