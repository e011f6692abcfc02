"""Decoupled two-stage training: matching, then uncertainty on a frozen matcher."""

from .config import (
    EvalConfig,
    RunConfig,
    TrainConfig,
    apply_overrides,
    load_config,
    preset,
    save_config,
    stage2_defaults,
)
from .sampler import load_batch, mix_sampler
from .train import (
    NumericalFailure,
    TrainResult,
    cosine_lr,
    matching_hash,
    restore_head,
    restore_model,
    save_train_checkpoint,
    train_stage1,
    train_stage2,
)

__all__ = [
    "EvalConfig", "NumericalFailure", "RunConfig", "TrainConfig", "TrainResult",
    "apply_overrides", "cosine_lr", "load_batch", "load_config", "matching_hash",
    "mix_sampler", "preset", "restore_head", "restore_model", "save_config",
    "save_train_checkpoint", "stage2_defaults", "train_stage1", "train_stage2",
]
