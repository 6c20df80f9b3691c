from .adam import AdamState, adam_step
from .dataset import (
    Dataset,
    View,
    dataset_from_dict,
    downsample,
    fibonacci_cameras,
    load_dataset,
    save_dataset,
    synthetic_dataset,
)
from .fit import FitResult, LossAndGrad, OptimConfig, fit, loss_and_grad

__all__ = [
    "AdamState",
    "Dataset",
    "FitResult",
    "LossAndGrad",
    "OptimConfig",
    "View",
    "adam_step",
    "dataset_from_dict",
    "downsample",
    "fibonacci_cameras",
    "fit",
    "load_dataset",
    "loss_and_grad",
    "save_dataset",
    "synthetic_dataset",
]
