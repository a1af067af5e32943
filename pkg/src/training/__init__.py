"""Gradients, optimization, checkpoints and the training loops."""

from .config import ModelConfig, TrainConfig
from .optimizer import AdamState, LRSchedule, adam_step, lr_schedule, optimizer_step
from .backward import BackwardResult, NonFiniteGradientError, backward
from .checkpoint import (
    CHECKPOINT_VERSION,
    Checkpoint,
    CheckpointError,
    CheckpointVersionError,
    CheckpointSchemaError,
    CheckpointChecksumError,
    save_checkpoint,
    load_checkpoint,
    checkpoint_from_model,
    model_from_checkpoint,
)
from .gradcheck import GradCheckReport, grad_check, head_grad_check, model_grad_check
from .loops import IH0Result, MetricsLog, TrainResult, fit, train_ih, train_ih0, train_mnist, train_smnist

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "AdamState",
    "LRSchedule",
    "adam_step",
    "lr_schedule",
    "optimizer_step",
    "BackwardResult",
    "NonFiniteGradientError",
    "backward",
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointSchemaError",
    "CheckpointChecksumError",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_from_model",
    "model_from_checkpoint",
    "GradCheckReport",
    "grad_check",
    "head_grad_check",
    "model_grad_check",
    "IH0Result",
    "TrainResult",
    "MetricsLog",
    "fit",
    "train_ih",
    "train_ih0",
    "train_mnist",
    "train_smnist",
]
