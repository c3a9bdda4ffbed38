"""Dataset generation, training loop, evaluation sweeps, persistence, CLI backend."""

from .dataset import (
    Dataset,
    denormalize,
    generate_dataset,
    load_dataset,
    normalize,
    split_bounds,
)
from .evaluate import SweepResult, emit_results, evaluate_sweep, load_results, nmse, nmse_db, refine_batch
from .training import EMA, TrainOptions, TrainState, load_checkpoint, save_checkpoint, train

__all__ = [
    "Dataset",
    "EMA",
    "SweepResult",
    "TrainOptions",
    "TrainState",
    "denormalize",
    "emit_results",
    "evaluate_sweep",
    "generate_dataset",
    "load_checkpoint",
    "load_dataset",
    "load_results",
    "nmse",
    "nmse_db",
    "normalize",
    "refine_batch",
    "save_checkpoint",
    "split_bounds",
    "train",
]
