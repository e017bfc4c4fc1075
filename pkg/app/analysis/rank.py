"""Rank diagnostics of materialized mixers against their structural bounds.

What is measured depends on the family:

* attention: rank of the row-centred log of the mixer. The softmax itself is
  generally full rank, but log M differs from Q K^T / sqrt(P) only by a per-row
  constant, so centring each row leaves a matrix of rank <= P.
* Toeplitz: the largest rank over the strictly-lower blocks M[r:, :r]. A band of
  width d(K-1) confines each block to a corner triangle of that size.
* semiseparable: every strictly-lower block has rank <= N, and the whole
  matrix rank <= N * ceil(L / N).
* masked low-rank: rank(M) <= U. Dense and autocorrelation mixers only carry
  the ambient bound n.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core.exceptions import UndefinedMetricError
from ..engine.tensor import DEFAULT_RANK_TOL, Matrix, as_matrix, numerical_rank, singular_values
from ..mixers.spec import MixerFamily, MixerSpec
from .similarity import MixerSnapshot

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankDiagnostic:
    family: str
    measure: str
    rank: int
    bound: int
    full_rank: int
    passed: bool


def _count_above(sigma: np.ndarray, threshold: float) -> int:
    return int(np.count_nonzero(sigma > threshold))


def offdiagonal_block_rank(M: Matrix, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Maximum numerical rank over the strictly-lower blocks M[r:, :r].

    Singular values are thresholded against the spectral norm of the whole matrix.
    """
    M = as_matrix(M, "M")
    sigma = singular_values(M)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    threshold = rel_tol * sigma[0]
    n = min(M.shape)
    return max((_count_above(singular_values(M[r:, :r]), threshold) for r in range(1, n)), default=0)


def attention_score_rank(M: Matrix, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Rank of log(M) with each row centred; M must be entrywise positive.

    A saturated softmax (entries underflowed to 0) has no finite log and raises
    UndefinedMetricError.
    """
    M = as_matrix(M, "M")
    if np.any(M <= 0):
        raise UndefinedMetricError(f"attention score rank needs a strictly positive mixer, "
                                   f"got {int(np.count_nonzero(M <= 0))} non-positive entries")
    scores = np.log(M)
    centred = scores - scores.mean(axis=1, keepdims=True)
    scale = max(singular_values(scores)[0], 1.0)
    return _count_above(singular_values(centred), rel_tol * scale)


def rank_report(snapshot: MixerSnapshot, spec: MixerSpec, rel_tol: float = DEFAULT_RANK_TOL) -> RankDiagnostic:
    M = snapshot.matrix
    n = M.shape[0]
    full = numerical_rank(M, rel_tol)
    family = spec.family
    if family is MixerFamily.ATTENTION:
        rank, bound, measure = attention_score_rank(M, rel_tol), spec.params.head_dim, "row-centred log"
        passed = rank <= bound
    elif family is MixerFamily.TOEPLITZ:
        K, d = spec.params.kernel_size, spec.params.dilation
        rank, bound, measure = offdiagonal_block_rank(M, rel_tol), max(K + 1, d * (K - 1)), "strictly-lower blocks"
        passed = rank <= bound
    elif family is MixerFamily.SEMISEPARABLE:
        N = spec.params.state_size
        rank, bound, measure = offdiagonal_block_rank(M, rel_tol), N, "strictly-lower blocks"
        passed = rank <= N and full <= N * math.ceil(n / N)
    elif family is MixerFamily.MASKED_LOWRANK:
        rank, bound, measure = full, spec.params.hidden, "full"
        passed = rank <= bound
    else:
        rank, bound, measure = full, n, "full"
        passed = rank <= bound
    if not passed:
        logger.warning(f"Rank bound violated for {snapshot.tag}: {measure} rank {rank} > {bound}")
    return RankDiagnostic(family.value, measure, rank, bound, full, passed)
