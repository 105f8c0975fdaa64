"""
voclip
======

Motion-consistency training for monocular visual odometry at desk scale.

Main Components:
- se3: rigid transforms, Euler angles and trajectories
- clips: overlapped clip sampling and batch layout
- losses: MSE + motion-consistency loss with its analytic gradient
- tensor / model / optim: reverse-mode autodiff, the divided space-time
  transformer and Adam
- kitti_eval: KITTI odometry metrics with Umeyama alignment
- poses / config / export / checkpoint: file formats
"""

from .clips import Clip, ClipPairBatch, ClipPairs, SamplerConfig, assemble_batches, overlap_map, sample_clip_pairs
from .config import RunConfig, parse_config, read_config, write_config
from .errors import (
    ConfigError,
    DegenerateAlignmentError,
    InvalidArgumentError,
    NonFiniteError,
    ParseError,
    ShapeError,
    VerificationError,
    VoclipError,
)
from .kitti_eval import AlignmentMode, EvalReport, align_trajectory, evaluate, evaluate_sequences, umeyama_align
from .losses import LossBreakdown, LossConfig, loss_gradient, mc_loss_closed, mc_loss_oracle, mse_loss, total_loss
from .model import ModelConfig, forward, forward_batch, init_params
from .poses import read_kitti_poses, write_kitti_poses
from .se3 import Pose6DoF, Trajectory, TransformSE3, absolute_to_relative, relative_to_absolute

__version__ = "0.1.0"
__license__ = "MIT"

__all__ = [
    # geometry
    "Pose6DoF",
    "TransformSE3",
    "Trajectory",
    "relative_to_absolute",
    "absolute_to_relative",
    # clips
    "Clip",
    "ClipPairBatch",
    "ClipPairs",
    "SamplerConfig",
    "sample_clip_pairs",
    "assemble_batches",
    "overlap_map",
    # losses
    "LossConfig",
    "LossBreakdown",
    "mse_loss",
    "mc_loss_closed",
    "mc_loss_oracle",
    "total_loss",
    "loss_gradient",
    # model
    "ModelConfig",
    "init_params",
    "forward",
    "forward_batch",
    # evaluation
    "AlignmentMode",
    "EvalReport",
    "umeyama_align",
    "align_trajectory",
    "evaluate",
    "evaluate_sequences",
    # files
    "RunConfig",
    "parse_config",
    "read_config",
    "write_config",
    "read_kitti_poses",
    "write_kitti_poses",
    # errors
    "VoclipError",
    "InvalidArgumentError",
    "ShapeError",
    "NonFiniteError",
    "ParseError",
    "ConfigError",
    "DegenerateAlignmentError",
    "VerificationError",
]


def get_version() -> str:
    return __version__


def get_info() -> dict:
    """Package name, version and component modules."""
    return {
        "name": "voclip",
        "version": __version__,
        "license": __license__,
        "components": [
            "se3",
            "clips",
            "losses",
            "tensor",
            "model",
            "optim",
            "gradcheck",
            "kitti_eval",
            "synthetic",
            "training",
        ],
    }
