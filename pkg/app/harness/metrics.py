"""Task metrics: MSE, MASE, accuracy, precision/recall/F1 and residual anomaly detection"""
import logging
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from ..core.exceptions import ShapeError, UndefinedMetricError

logger = logging.getLogger(__name__)


class MaseScaling(str, Enum):
    # naive error over the forecast window itself
    WINDOW = "window"
    # naive error over the lookback (in-sample history)
    HISTORY = "history"


def _same_shape(pred, truth) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError("prediction and truth differ", pred.shape, truth.shape)
    return pred, truth


def metric_mse(pred, truth, mask: Optional[np.ndarray] = None) -> float:
    """Mean squared error, over the entries where ``mask`` is 1 when given"""
    pred, truth = _same_shape(pred, truth)
    sq = (pred - truth) ** 2
    if mask is None:
        return float(np.mean(sq))
    mask = np.asarray(mask, dtype=np.float64)
    if mask.sum() == 0:
        raise UndefinedMetricError("masked MSE over an empty mask")
    return float(np.sum(sq * mask) / mask.sum())


def naive_scale(series) -> float:
    """Mean absolute one-step difference of ``series``"""
    series = np.asarray(series, dtype=np.float64)
    if series.shape[0] < 2:
        raise UndefinedMetricError("MASE needs at least 2 steps for its naive scale")
    return float(np.mean(np.abs(np.diff(series, axis=0))))


def metric_mase(pred, truth, history=None, scaling: MaseScaling = MaseScaling.WINDOW) -> float:
    """Mean |truth - pred| over the naive one-step error of ``truth`` (or ``history``)"""
    pred, truth = _same_shape(pred, truth)
    scale_series = truth if MaseScaling(scaling) is MaseScaling.WINDOW else history
    if scale_series is None:
        raise ValueError("history scaling needs the in-sample history")
    scale = naive_scale(scale_series)
    if scale == 0.0:
        raise UndefinedMetricError("MASE undefined: the scaling series is constant")
    return float(np.mean(np.abs(truth - pred))) / scale


def mase_over_windows(pred: np.ndarray, truth: np.ndarray, history: np.ndarray,
                      scaling: MaseScaling = MaseScaling.WINDOW) -> Tuple[Optional[float], int]:
    """Unweighted mean MASE over (window, channel) series; returns (mean, undefined count)"""
    pred, truth = _same_shape(pred, truth)
    values, undefined = [], 0
    for w in range(pred.shape[0]):
        for c in range(pred.shape[2]):
            try:
                values.append(metric_mase(pred[w, :, c], truth[w, :, c], history[w, :, c], scaling))
            except UndefinedMetricError:
                undefined += 1
    if undefined:
        logger.warning(f"MASE undefined for {undefined} of {pred.shape[0] * pred.shape[2]} series")
    return (float(np.mean(values)) if values else None), undefined


def metric_accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError("label arrays differ", pred.shape, truth.shape)
    if pred.size == 0:
        raise UndefinedMetricError("accuracy of zero predictions")
    return float(np.mean(pred == truth))


def precision_recall(pred, truth, positive=1) -> Tuple[float, float]:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError("label arrays differ", pred.shape, truth.shape)
    tp = np.count_nonzero((pred == positive) & (truth == positive))
    fp = np.count_nonzero((pred == positive) & (truth != positive))
    fn = np.count_nonzero((pred != positive) & (truth == positive))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return float(precision), float(recall)


def metric_f1(pred, truth, positive=1) -> float:
    precision, recall = precision_recall(pred, truth, positive)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(pred, truth, n_classes: int) -> float:
    return float(np.mean([metric_f1(pred, truth, k) for k in range(n_classes)]))


def residual_threshold(residuals: np.ndarray, quantile: float = 0.99) -> float:
    residuals = np.abs(np.asarray(residuals, dtype=np.float64))
    if residuals.size == 0:
        raise UndefinedMetricError("no residuals to calibrate the anomaly threshold")
    return float(np.quantile(residuals, quantile))


def detect_anomalies(residuals: np.ndarray, threshold: float) -> np.ndarray:
    return np.abs(np.asarray(residuals, dtype=np.float64)) > threshold
