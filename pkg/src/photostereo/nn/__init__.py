"""Minimal numpy tensor engine for the heat-map network."""

from .checkpoint import CheckpointError, load, save
from .layers import conv2d, sepconv4d
from .network import Network, NetworkConfig, mse_heatmap_loss
from .optim import OptimizerState, rmsprop_step

__all__ = [
    "CheckpointError",
    "Network",
    "NetworkConfig",
    "OptimizerState",
    "conv2d",
    "load",
    "mse_heatmap_loss",
    "rmsprop_step",
    "save",
    "sepconv4d",
]
