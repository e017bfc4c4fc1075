"""A ReLU feed-forward network read as a masked low-rank D x D mixer"""
from typing import Optional

import numpy as np

from ..core.exceptions import ShapeError
from ..engine.tensor import Matrix, as_matrix
from .spec import MaskedLowRankParams


def _check(params: MaskedLowRankParams, Y: Matrix) -> Matrix:
    Y = as_matrix(Y, "Y")
    if Y.shape[1] != params.W_up.shape[0]:
        raise ShapeError("Y width does not match W_up", Y.shape, params.W_up.shape)
    return Y


def activation_mask(params: MaskedLowRankParams, Y: Matrix) -> np.ndarray:
    """D_mask per row: 1 where the hidden pre-activation is positive"""
    Y = _check(params, Y)
    return (Y @ params.W_up > 0).astype(np.float64)


def build_masked_lowrank_mixer(params: MaskedLowRankParams, Y: Matrix, row: Optional[int] = None) -> Matrix:
    """M = W_down^T diag(mask) W_up^T for one evaluation row, so M y^T = FFN(y)^T.

    ``row`` may be omitted when Y has a single row.
    """
    Y = _check(params, Y)
    if row is None:
        if Y.shape[0] != 1:
            raise ShapeError("Y has several rows; pass the evaluation row", Y.shape)
        row = 0
    mask = activation_mask(params, Y[row:row + 1])[0]
    return params.W_down.T @ (mask[:, None] * params.W_up.T)


def masked_lowrank_apply(params: MaskedLowRankParams, Y: Matrix) -> Matrix:
    """Direct FFN evaluation, row-wise: ReLU(Y W_up) W_down"""
    Y = _check(params, Y)
    return np.maximum(Y @ params.W_up, 0.0) @ params.W_down
