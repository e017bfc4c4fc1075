"""Training loop and per-split evaluation"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..core.exceptions import NonFiniteLossError
from ..engine.autodiff import Tape
from ..engine.optim import Adam, clip_grad_norm, cosine_lr
from ..models.sequence import SequenceModel, Task, loss_node, predict
from .data import WindowedDataset
from .metrics import (
    MaseScaling,
    detect_anomalies,
    macro_f1,
    mase_over_windows,
    metric_accuracy,
    metric_f1,
    metric_mse,
    residual_threshold,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 300
    batch_size: int = 32
    clip_norm: float = 1.0
    schedule: str = "constant"
    seed: int = 0
    log_every: int = 50
    dense_lr_scale: float = 1.0

    def __post_init__(self):
        if self.dense_lr_scale <= 0:
            raise ValueError(f"dense_lr_scale must be positive, got {self.dense_lr_scale}")
        if self.lr < 0 or self.steps < 0 or self.batch_size < 1:
            raise ValueError(f"invalid training budget: lr={self.lr}, steps={self.steps}, batch={self.batch_size}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    steps: int = 0
    wall_clock: float = 0.0


def _batch(dataset: WindowedDataset, index: np.ndarray):
    mask = None if dataset.mask is None else dataset.mask[index]
    return dataset.X[index], dataset.y[index], mask


def train(model: SequenceModel, dataset: WindowedDataset, config: TrainConfig) -> TrainResult:
    """Adam on the task loss over the train split; batches drawn from ``config.seed``"""
    train_set = dataset.subset("train")
    if len(train_set) == 0:
        raise ValueError("dataset has no training windows")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    # dense replacements take a scaled step
    scales = {p.name: config.dense_lr_scale for p in params if p.name.endswith(".dense")}
    optimizer = Adam(params, lr=config.lr, lr_scales=scales)
    result = TrainResult()
    started = time.perf_counter()
    batch_size = min(config.batch_size, len(train_set))
    for step in range(config.steps):
        index = rng.choice(len(train_set), size=batch_size, replace=False)
        X, y, mask = _batch(train_set, index)
        optimizer.zero_grad()
        tape = Tape()
        loss = loss_node(model, tape, X, y, mask)
        value = float(loss.value)
        if not math.isfinite(value):
            logger.error(f"Non-finite loss {value} at step {step}; aborting")
            raise NonFiniteLossError(step, value)
        tape.backward(loss)
        clip_grad_norm(params, config.clip_norm)
        lr = cosine_lr(config.lr, step, config.steps) if config.schedule == "cosine" else config.lr
        optimizer.step(lr)
        result.losses.append(value)
        if config.log_every and step % config.log_every == 0:
            logger.debug(f"step {step}: loss {value:.6f}")
    result.steps = config.steps
    result.wall_clock = time.perf_counter() - started
    return result


def evaluate(model: SequenceModel, dataset: WindowedDataset, split: str = "test",
             scaling: MaseScaling = MaseScaling.WINDOW,
             anomaly_quantile: float = 0.99) -> Dict[str, Optional[float]]:
    """Task metrics on one split, evaluated as a single batch"""
    part = dataset.subset(split)
    if len(part) == 0:
        raise ValueError(f"dataset has no {split} windows")
    pred = predict(model, part.X)
    task = model.config.task
    if task is Task.CLASSIFICATION:
        labels = np.argmax(pred, axis=-1)
        n_classes = model.config.n_classes
        f1 = metric_f1(labels, part.y) if n_classes == 2 else macro_f1(labels, part.y, n_classes)
        return {"accuracy": metric_accuracy(labels, part.y), "f1": f1}
    if task is Task.IMPUTATION:
        return {"mse": metric_mse(pred, part.y, part.mask)}

    metrics: Dict[str, Optional[float]] = {"mse": metric_mse(pred, part.y)}
    metrics["mase"], undefined = mase_over_windows(pred, part.y, part.X, scaling)
    if undefined:
        metrics["mase_undefined"] = float(undefined)
    if part.anomalies is not None and split != "val":
        metrics.update(anomaly_scores(model, dataset, pred - part.y, part.anomalies, anomaly_quantile))
    return metrics


def anomaly_scores(model: SequenceModel, dataset: WindowedDataset, residuals: np.ndarray,
                   labels: np.ndarray, quantile: float) -> Dict[str, float]:
    """F1 of thresholded forecast residuals; the threshold is a quantile of validation residuals"""
    val = dataset.subset("val")
    reference = predict(model, val.X) - val.y if len(val) else residuals
    threshold = residual_threshold(reference, quantile)
    flagged = detect_anomalies(residuals, threshold)
    return {"anomaly_f1": metric_f1(flagged.ravel(), labels.ravel(), positive=True),
            "anomaly_threshold": threshold}
