"""How close a dense mixer stays to the structured mixer it replaced"""
import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core.exceptions import ShapeError, UndefinedMetricError
from ..engine.tensor import Matrix, as_matrix, check_square, numerical_rank, singular_values

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class MixerSnapshot:
    """A mixer matrix with where it came from"""
    model: str
    block: str
    head: int
    epoch: int
    matrix: np.ndarray
    normalization: str = "none"

    def __post_init__(self):
        check_square(self.matrix, "snapshot")
        if not self.model or not self.block:
            raise ValueError("snapshot provenance (model, block) must be non-empty")

    @property
    def tag(self) -> str:
        return f"{self.model}/{self.block}/h{self.head}/e{self.epoch}"


@dataclass(frozen=True)
class SimilarityReport:
    psnr: float
    jsd: float
    rank_orig: int
    rank_dense: int
    nuclear_norm_orig: float
    nuclear_norm_dense: float
    psnr_rescaled: bool = False
    jsd_normalization: str = "absolute values"

    def __post_init__(self):
        if not 0.0 <= self.jsd <= LN2 + 1e-12:
            raise ValueError(f"jsd {self.jsd} outside [0, ln 2]")


def _pair(M: Matrix, M_tilde: Matrix) -> Tuple[np.ndarray, np.ndarray]:
    M = as_matrix(M, "M")
    M_tilde = as_matrix(M_tilde, "M_tilde")
    if M.shape != M_tilde.shape:
        raise ShapeError("similarity needs equal shapes", M.shape, M_tilde.shape)
    return M, M_tilde


def psnr_details(M: Matrix, M_tilde: Matrix) -> Tuple[float, bool]:
    """PSNR in dB and whether the min-max rescale fallback was applied"""
    M, M_tilde = _pair(M, M_tilde)
    rescaled = False
    peak = float(M.max())
    if peak <= 0.0:
        lo = min(M.min(), M_tilde.min())
        span = max(M.max(), M_tilde.max()) - lo
        span = span if span > 0 else 1.0
        M, M_tilde = (M - lo) / span, (M_tilde - lo) / span
        peak = float(M.max())
        rescaled = True
        logger.warning("PSNR peak of the original mixer is not positive; both matrices min-max rescaled")
    mse = float(np.mean((M - M_tilde) ** 2))
    if mse == 0.0:
        return math.inf, rescaled
    if peak <= 0.0:
        raise UndefinedMetricError("PSNR undefined: original mixer has no positive peak after rescaling")
    return 10.0 * math.log10(peak * peak / mse), rescaled


def psnr(M: Matrix, M_tilde: Matrix) -> float:
    """10 log10(M_max^2 / MSE); +inf when the matrices agree exactly"""
    return psnr_details(M, M_tilde)[0]


def entry_distribution(M: Matrix) -> np.ndarray:
    weights = np.abs(np.asarray(M, dtype=np.float64)).ravel()
    total = weights.sum()
    if total == 0.0:
        raise UndefinedMetricError("cannot normalize an all-zero matrix into a distribution")
    return weights / total


def _kl_to_mixture(p: np.ndarray, m: np.ndarray) -> float:
    support = p > 0
    return float(np.sum(p[support] * np.log(p[support] / m[support])))


def jsd(M: Matrix, M_tilde: Matrix) -> float:
    """Jensen-Shannon divergence (natural log) of the normalized absolute entries"""
    M, M_tilde = _pair(M, M_tilde)
    p = entry_distribution(M)
    q = entry_distribution(M_tilde)
    m = 0.5 * (p + q)
    value = 0.5 * _kl_to_mixture(p, m) + 0.5 * _kl_to_mixture(q, m)
    return min(max(value, 0.0), LN2)


def nuclear_norm(M: Matrix) -> float:
    return float(np.sum(singular_values(as_matrix(M, "M"))))


def similarity_report(M: Matrix, M_tilde: Matrix) -> SimilarityReport:
    M, M_tilde = _pair(M, M_tilde)
    value, rescaled = psnr_details(M, M_tilde)
    return SimilarityReport(
        psnr=value,
        jsd=jsd(M, M_tilde),
        rank_orig=numerical_rank(M),
        rank_dense=numerical_rank(M_tilde),
        nuclear_norm_orig=nuclear_norm(M),
        nuclear_norm_dense=nuclear_norm(M_tilde),
        psnr_rescaled=rescaled,
    )


def random_baseline(shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Uniform-random matrix used as the JSD reference point"""
    return rng.uniform(0.0, 1.0, size=shape)
