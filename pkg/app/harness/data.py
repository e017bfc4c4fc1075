"""Windowed datasets: synthetic AR series, toy classification, CSV ingestion"""
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.exceptions import DataFormatError, ShapeError, UnstableProcessError
from ..models.sequence import Task

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLITS = (0.7, 0.1, 0.2)
ROOT_TOLERANCE = 1e-12
BURN_IN = 200


@dataclass
class WindowedDataset:
    """Equal-length windows with their split tags.

    ``y`` holds the horizon (T, C) for forecasting, the clean lookback for
    imputation and integer labels for classification. For imputation ``mask``
    marks the hidden entries (1 = hidden, zeroed in ``X``). ``anomalies`` flags
    injected spikes inside each forecast horizon.
    """
    task: Task
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    mask: Optional[np.ndarray] = None
    anomalies: Optional[np.ndarray] = None
    stats: Dict[str, List[float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.X.ndim != 3:
            raise ShapeError("windows must be (N, L, C)", self.X.shape)
        if len(self.y) != len(self.X) or len(self.split) != len(self.X):
            raise ShapeError("windows, targets and split tags differ in count",
                             self.X.shape, self.y.shape, self.split.shape)

    def __len__(self):
        return len(self.X)

    @property
    def lookback(self) -> int:
        return self.X.shape[1]

    @property
    def channels(self) -> int:
        return self.X.shape[2]

    @property
    def horizon(self) -> int:
        return self.y.shape[1] if self.task is Task.FORECAST else 0

    def subset(self, name: str) -> "WindowedDataset":
        keep = self.split == name
        return replace(
            self,
            X=self.X[keep],
            y=self.y[keep],
            split=self.split[keep],
            mask=None if self.mask is None else self.mask[keep],
            anomalies=None if self.anomalies is None else self.anomalies[keep],
        )

    def sizes(self) -> Dict[str, int]:
        return {name: int(np.count_nonzero(self.split == name)) for name in SPLIT_NAMES}


def check_stationary(coeffs: Sequence[float]) -> np.ndarray:
    """Reject AR coefficients with a characteristic root outside the unit circle"""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.size == 0:
        raise UnstableProcessError("AR coefficients must be a non-empty vector")
    roots = np.roots(np.concatenate(([1.0], -coeffs)))
    if roots.size and np.max(np.abs(roots)) > 1.0 + ROOT_TOLERANCE:
        raise UnstableProcessError(
            f"AR coefficients {coeffs.tolist()} are explosive (largest root modulus {np.max(np.abs(roots)):.6g})")
    return coeffs


def simulate_ar(coeffs: Sequence[float], n_steps: int, channels: int, noise_std: float,
                rng: np.random.Generator, burn_in: int = BURN_IN) -> np.ndarray:
    """(n_steps, channels) AR(p) paths with Gaussian innovations, started from N(0, 1) values"""
    coeffs = check_stationary(coeffs)
    p = coeffs.size
    total = burn_in + n_steps
    series = np.zeros((p + total, channels))
    series[:p] = rng.normal(0.0, 1.0, size=(p, channels))
    noise = rng.normal(0.0, 1.0, size=(total, channels)) * noise_std
    lagged = coeffs[:, None]
    for t in range(p, p + total):
        series[t] = np.sum(lagged * series[t - p:t][::-1], axis=0) + noise[t - p]
    return series[p + burn_in:]


def inject_spikes(series: np.ndarray, rate: float, rng: np.random.Generator,
                  magnitude: float = 5.0) -> Tuple[np.ndarray, np.ndarray]:
    """Add +-magnitude*std spikes at a ``rate`` fraction of entries; returns (series, labels)"""
    labels = rng.uniform(size=series.shape) < rate
    scale = series.std(axis=0, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    signs = rng.choice([-1.0, 1.0], size=series.shape)
    return series + labels * signs * magnitude * scale, labels


def split_counts(total: int, fractions: Sequence[float]) -> List[int]:
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.size == 0 or fractions.size > len(SPLIT_NAMES) or np.any(fractions < 0) or fractions.sum() <= 0:
        raise ValueError(f"invalid split fractions {fractions.tolist()}")
    bounds = np.rint(np.cumsum(fractions / fractions.sum()) * total).astype(int)
    return np.diff(np.concatenate(([0], bounds))).tolist()


def sliding_windows(segment: np.ndarray, lookback: int, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stride-1 windows fully inside ``segment``"""
    count = segment.shape[0] - lookback - horizon + 1
    if count < 1:
        return np.zeros((0, lookback, segment.shape[1])), np.zeros((0, horizon, segment.shape[1]))
    starts = np.arange(count)
    X = np.stack([segment[s:s + lookback] for s in starts])
    Y = np.stack([segment[s + lookback:s + lookback + horizon] for s in starts])
    return X, Y


def _window_segments(segments: Sequence[np.ndarray], lookback: int, horizon: int,
                     labels: Optional[Sequence[np.ndarray]] = None) -> WindowedDataset:
    Xs, Ys, tags, flags = [], [], [], []
    for i, segment in enumerate(segments):
        X, Y = sliding_windows(segment, lookback, horizon)
        Xs.append(X)
        Ys.append(Y)
        tags.extend([SPLIT_NAMES[i]] * len(X))
        if labels is not None:
            flags.append(sliding_windows(labels[i].astype(np.float64), lookback, horizon)[1] > 0)
    return WindowedDataset(
        task=Task.FORECAST,
        X=np.concatenate(Xs),
        y=np.concatenate(Ys),
        split=np.array(tags),
        anomalies=np.concatenate(flags) if labels is not None else None,
    )


def gen_synthetic_series(coeffs: Sequence[float], n_steps: int, channels: int, noise_std: float,
                         seed: int) -> np.ndarray:
    return simulate_ar(coeffs, n_steps, channels, noise_std, np.random.default_rng(seed))


def gen_synthetic_ar(L: int, C: int, T: int, coeffs: Sequence[float], noise_std: float, n_windows: int,
                     seed: int, splits: Sequence[float] = DEFAULT_SPLITS, anomaly_rate: float = 0.0) -> WindowedDataset:
    """AR(p) forecasting windows, split along time so no window crosses a boundary"""
    if n_windows < 1:
        raise ValueError(f"n_windows must be >= 1, got {n_windows}")
    rng = np.random.default_rng(seed)
    counts = split_counts(n_windows, splits)
    lengths = [count + L + T - 1 if count else 0 for count in counts]
    series = simulate_ar(coeffs, sum(lengths), C, noise_std, rng)
    labels = None
    if anomaly_rate > 0:
        series, labels = inject_spikes(series, anomaly_rate, rng)
    cuts = np.cumsum([0] + lengths)
    segments = [series[a:b] for a, b in zip(cuts[:-1], cuts[1:])]
    label_segments = None if labels is None else [labels[a:b] for a, b in zip(cuts[:-1], cuts[1:])]
    dataset = _window_segments(segments, L, T, label_segments)
    logger.info(f"Generated AR({len(coeffs)}) dataset: {dataset.sizes()} windows, L={L}, T={T}, C={C}")
    return dataset


def gen_classification_toy(L: int, C: int, n_classes: int, seed: int, n_windows: int = 300,
                           noise_std: float = 0.1, splits: Sequence[float] = DEFAULT_SPLITS) -> WindowedDataset:
    """Class k is a sinusoid at frequency (k+1)/L cycles per step with a class-specific phase per channel"""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_classes, C))
    labels = rng.permutation(np.arange(n_windows) % n_classes)
    t = np.arange(L)[:, None]
    freqs = (np.arange(n_classes) + 1.0) / L
    clean = np.sin(2.0 * np.pi * freqs[labels][:, None, None] * t[None] + phases[labels][:, None, :])
    X = clean + rng.normal(0.0, 1.0, size=clean.shape) * noise_std
    counts = split_counts(n_windows, splits)
    tags = np.repeat(np.array(SPLIT_NAMES[:len(counts)]), counts)
    return WindowedDataset(task=Task.CLASSIFICATION, X=X, y=labels.astype(np.int64), split=tags)


def make_imputation_dataset(dataset: WindowedDataset, mask_ratio: float, seed: int) -> WindowedDataset:
    """Hide a ``mask_ratio`` fraction of every lookback; the model reconstructs the full window"""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    rng = np.random.default_rng(seed)
    mask = (rng.uniform(size=dataset.X.shape) < mask_ratio).astype(np.float64)
    return WindowedDataset(
        task=Task.IMPUTATION,
        X=dataset.X * (1.0 - mask),
        y=dataset.X.copy(),
        split=dataset.split.copy(),
        mask=mask,
        stats=dict(dataset.stats),
    )


_LINE_IN_MESSAGE = re.compile(r"line (\d+)")


def read_series_csv(path: Union[str, Path]) -> Tuple[pd.DataFrame, np.ndarray]:
    """Header row, timestamp column, numeric channels; returns the frame and the (n, C) values"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except FileNotFoundError as e:
        raise DataFormatError("file not found", path) from e
    except pd.errors.EmptyDataError as e:
        raise DataFormatError("empty file", path) from e
    except pd.errors.ParserError as e:
        match = _LINE_IN_MESSAGE.search(str(e))
        raise DataFormatError(f"ragged row: {e}", path, int(match.group(1)) if match else None) from e
    if frame.shape[1] < 2:
        raise DataFormatError("need a timestamp column and at least one channel", path, 1)
    channels = frame.iloc[:, 1:]
    ragged = np.flatnonzero(channels.isna().any(axis=1).to_numpy())
    if ragged.size:
        raise DataFormatError(f"ragged row: expected {frame.shape[1]} fields", path, int(ragged[0]) + 2)
    numeric = channels.apply(pd.to_numeric, errors="coerce")
    bad_rows, bad_cols = np.nonzero(numeric.isna().to_numpy())
    if bad_rows.size:
        row, col = int(bad_rows[0]), int(bad_cols[0])
        raise DataFormatError(
            f"non-numeric value {channels.iat[row, col]!r} in column {channels.columns[col]!r}", path, row + 2)
    return frame, numeric.to_numpy(dtype=np.float64)


def load_csv(path: Union[str, Path], lookback: int, horizon: int,
             splits: Sequence[float] = DEFAULT_SPLITS) -> WindowedDataset:
    """Stride-1 forecasting windows per split, standardized with train-split statistics"""
    _, values = read_series_csv(path)
    counts = split_counts(values.shape[0], splits)
    cuts = np.cumsum([0] + counts)
    train = values[cuts[0]:cuts[1]]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    standardized = (values - mean) / std
    segments = []
    for name, a, b in zip(SPLIT_NAMES, cuts[:-1], cuts[1:]):
        if b - a < lookback + horizon:
            raise DataFormatError(
                f"{name} split has {b - a} rows (lines {a + 2}-{b + 1}), fewer than L+T={lookback + horizon}",
                path, int(a + 2))
        segments.append(standardized[a:b])
    dataset = _window_segments(segments, lookback, horizon)
    dataset.stats = {"mean": mean.tolist(), "std": std.tolist()}
    logger.info(f"Loaded {path}: {values.shape[0]} rows, {values.shape[1]} channels, {dataset.sizes()} windows")
    return dataset


def write_series_csv(series: np.ndarray, path: Union[str, Path], start: str = "2020-01-01",
                     freq: str = "D") -> Path:
    """Write (n, C) values with a timestamp column; loadable by ``load_csv``"""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ShapeError("series must be (steps, channels)", series.shape)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(series, columns=[f"ch{c}" for c in range(series.shape[1])])
    frame.insert(0, "timestamp", pd.date_range(start, periods=series.shape[0], freq=freq).astype(str))
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {series.shape[0]} rows to {path}")
    return path
