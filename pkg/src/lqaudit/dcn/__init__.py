from .checkpoint import checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint
from .model import (
    DcnConfig,
    DcnModel,
    ScoredSlice,
    backward,
    batch_loss_and_grads,
    classify,
    co_attention_block,
    forward,
    init_params,
    layer_norm,
    multi_head_attention,
    parameter_shapes,
    pool_dual,
    project,
    score_slice,
    sigmoid,
    weighted_bce,
)
from .threshold import DEFAULT_TAU_HIGH, select_threshold
from .train import Adam, EpochMetrics, TrainHyper, TrainResult, evaluate, train

__all__ = [
    "Adam", "DcnConfig", "DcnModel", "EpochMetrics", "DEFAULT_TAU_HIGH", "ScoredSlice", "TrainHyper",
    "TrainResult", "backward", "batch_loss_and_grads", "checkpoint_bytes", "classify",
    "co_attention_block", "evaluate", "forward", "init_params", "layer_norm", "load_checkpoint",
    "model_from_bytes", "multi_head_attention", "parameter_shapes", "pool_dual", "project",
    "save_checkpoint", "score_slice", "select_threshold", "sigmoid", "train", "weighted_bce",
]
