"""Pose-regression network with hand-written forward and backward passes."""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConvSpec, NetworkConfig, auto_config, conv_output_shape, desk_config, flatten_length, full_scale_config
from .estimator import GraspPoseRegressor
from .model import Parameters, Tape, backward, encode, forward, init_parameters
from .optim import AdamState, NonFiniteGradientError, adam_step, adam_update
from .training import LossSpec, TrainConfig, TrainResult, evaluate_residuals, fit_arrays, predict_batched, train

__all__ = [
    "AdamState",
    "ConvSpec",
    "GraspPoseRegressor",
    "LossSpec",
    "NetworkConfig",
    "NonFiniteGradientError",
    "Parameters",
    "Tape",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "adam_update",
    "auto_config",
    "backward",
    "conv_output_shape",
    "desk_config",
    "encode",
    "evaluate_residuals",
    "fit_arrays",
    "flatten_length",
    "forward",
    "init_parameters",
    "load_checkpoint",
    "full_scale_config",
    "predict_batched",
    "save_checkpoint",
    "train",
]
