"""Heatmap export: 8-bit binary PGM plus the raw entries as CSV"""
import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..core.exceptions import DataFormatError, ExportError
from ..engine.tensor import Matrix, as_matrix

logger = logging.getLogger(__name__)


def to_pixels(M: Matrix) -> np.ndarray:
    """Min-max scale to 0..255; a constant matrix maps to 255"""
    M = as_matrix(M, "M")
    lo, hi = M.min(), M.max()
    if hi == lo:
        return np.full(M.shape, 255, dtype=np.uint8)
    return np.rint(255.0 * (M - lo) / (hi - lo)).astype(np.uint8)


def export_heatmap(M: Matrix, path: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``<path>.pgm`` and ``<path>.csv``; returns both paths"""
    M = as_matrix(M, "M")
    base = Path(path)
    pgm_path, csv_path = base.with_suffix(".pgm"), base.with_suffix(".csv")
    rows, cols = M.shape
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        pgm_path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + to_pixels(M).tobytes())
        np.savetxt(csv_path, M, delimiter=",", fmt="%.17g")
    except OSError as e:
        raise ExportError(f"cannot write heatmap: {e}", base) from e
    logger.debug(f"Heatmap {rows}x{cols} written to {pgm_path}")
    return pgm_path, csv_path


def read_heatmap_csv(path: Union[str, Path]) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as e:
        raise DataFormatError(f"cannot read heatmap csv: {e}", path) from e


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Pixels of a P5 file written by ``export_heatmap``"""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DataFormatError("not an 8-bit P5 heatmap", path)
    cols, rows = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != rows * cols:
        raise DataFormatError(f"expected {rows * cols} pixels, found {pixels.size}", path)
    return pixels.reshape(rows, cols)
