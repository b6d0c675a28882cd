"""Synthetic data, occlusion protocol, training, evaluation and checkpoints."""

from .checkpoint import Checkpoint, CheckpointError
from .config import ABLATIONS, LearningRates, TrainConfig, config_from_text, config_to_text, load_config, save_config
from .evaluate import EvalReport, evaluate
from .optim import Adam, Moments, adam_step
from .protocol import Metrics, Occluder, OcclusionTargetUnreachable, occlusion_extent, psnr, simulate_occlusion
from .synthetic import Dataset, Frame, generate_synthetic_dataset, with_frames
from .train import DensifyEvent, TrainingDiverged, TrainResult, train

__all__ = [
    "ABLATIONS",
    "Adam",
    "Checkpoint",
    "CheckpointError",
    "Dataset",
    "DensifyEvent",
    "EvalReport",
    "Frame",
    "LearningRates",
    "Metrics",
    "Moments",
    "Occluder",
    "OcclusionTargetUnreachable",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "adam_step",
    "config_from_text",
    "config_to_text",
    "evaluate",
    "generate_synthetic_dataset",
    "load_config",
    "occlusion_extent",
    "psnr",
    "save_config",
    "simulate_occlusion",
    "train",
    "with_frames",
]
