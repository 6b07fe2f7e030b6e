"""P3D: part-wise pose-sequence transformer for word-level sign recognition.

The package is numpy-only: :mod:`p3d.tensor` provides a small reverse-mode
autodiff kernel on which the layers, model, optimiser and training loop are
built.
"""

from .ablation import ablation_report, ablation_rows
from .config import RunConfig, load_run_config
from .costs import count_flops, count_params
from .estimator import P3DClassifier, check_pose_sequences
from .evaluation import compute_metrics, evaluate, predict_video, predict_videos
from .gradcheck import model_grad_check, tiny_config
from .model import ModelConfig, P3DModel, build_model, model_forward
from .pose import PoseSequence, SyntheticSpec, generate_sequences
from .tensor import RngState, Tensor
from .training import TrainConfig, load_checkpoint, resume, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ablation_report", "ablation_rows", "RunConfig", "load_run_config", "count_flops", "count_params",
    "P3DClassifier", "check_pose_sequences", "compute_metrics", "evaluate", "predict_video",
    "predict_videos", "model_grad_check", "tiny_config", "ModelConfig", "P3DModel", "build_model",
    "model_forward", "PoseSequence", "SyntheticSpec", "generate_sequences", "RngState", "Tensor",
    "TrainConfig", "load_checkpoint", "resume", "save_checkpoint", "train",
]
