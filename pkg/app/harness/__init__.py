from .data import WindowedDataset, gen_classification_toy, gen_synthetic_ar, load_csv, make_imputation_dataset
from .metrics import MaseScaling, metric_accuracy, metric_f1, metric_mase, metric_mse
from .training import TrainConfig, TrainResult, evaluate, train

__all__ = [
    "MaseScaling",
    "TrainConfig",
    "TrainResult",
    "WindowedDataset",
    "evaluate",
    "gen_classification_toy",
    "gen_synthetic_ar",
    "load_csv",
    "make_imputation_dataset",
    "metric_accuracy",
    "metric_f1",
    "metric_mase",
    "metric_mse",
    "train",
]
