from .training import (
    TrainingAbortedError,
    TrainResult,
    compute_anchors,
    compute_losses,
    evaluate_checkpoint,
    load_checkpoint,
    overfit,
    predict_boxes,
    restore_model,
    save_checkpoint,
    train,
)
from .oracles import OracleResult, run_suite
from .visualize import UnknownSampleError, visualize

__all__ = [
    "TrainingAbortedError",
    "TrainResult",
    "compute_anchors",
    "compute_losses",
    "evaluate_checkpoint",
    "load_checkpoint",
    "overfit",
    "predict_boxes",
    "restore_model",
    "save_checkpoint",
    "train",
    "OracleResult",
    "run_suite",
    "UnknownSampleError",
    "visualize",
]
