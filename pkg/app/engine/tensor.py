"""Dense numerical substrate.

Matrices are float64 numpy arrays. Public operations check shapes up front and
raise ``ShapeError`` with both operand shapes; results are always finite.
"""
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
import numpy.typing as npt

from ..core.exceptions import ConvergenceError, ShapeError

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class Shape:
    """Sequence length L, channels C, width D split into H heads of width P"""
    L: int
    C: int
    D: int
    H: int
    P: int

    def __post_init__(self):
        for name in ("L", "C", "D", "H", "P"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ShapeError(f"Shape.{name} must be a positive integer, got {value!r}")
        if self.D != self.H * self.P:
            raise ShapeError(f"D must equal H*P, got D={self.D}, H={self.H}, P={self.P}")

    @classmethod
    def from_heads(cls, L: int, C: int, D: int, H: int) -> "Shape":
        if H <= 0 or D % H:
            raise ShapeError(f"D={D} is not divisible into H={H} heads")
        return cls(L=L, C=C, D=D, H=H, P=D // H)


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Coerce to a finite 2-D float64 array"""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array[None, :]
    if array.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", array.shape)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")
    return array


def as_vector(values, name: str = "vector") -> npt.NDArray[np.float64]:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1:
        raise ShapeError(f"{name} must be 1-D", array.shape)
    return array


def matmul(A: Matrix, B: Matrix) -> Matrix:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim < 2 or B.ndim < 2 or A.shape[-1] != B.shape[-2]:
        raise ShapeError("matmul dimension mismatch", A.shape, B.shape)
    return A @ B


def softmax_rows(M: Matrix) -> Matrix:
    """Row softmax along the last axis, stabilised by the row max"""
    M = np.asarray(M, dtype=np.float64)
    shifted = M - np.max(M, axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / np.sum(weights, axis=-1, keepdims=True)


def singular_values(M: Matrix) -> npt.NDArray[np.float64]:
    """Singular values in descending order"""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeError("singular values need a 2-D matrix", M.shape)
    if M.size == 0:
        return np.zeros(0)
    try:
        return np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"SVD did not converge for {M.shape} matrix: {e}") from e


def numerical_rank(M: Matrix, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Count singular values above ``rel_tol * sigma_max``; 0 for the zero matrix"""
    if rel_tol <= 0:
        raise ValueError(f"rel_tol must be positive, got {rel_tol}")
    sigma = singular_values(M)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rel_tol * sigma[0]))


def spectral_norm(M: Matrix) -> float:
    sigma = singular_values(M)
    return float(sigma[0]) if sigma.size else 0.0


def next_power_of_two(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def fft_autocorrelation(q, k) -> npt.NDArray[np.float64]:
    """Lagged correlation ``sum_t q[t+tau] * k[t]`` for tau = 0..L-1.

    Both inputs are zero-padded to a power of two >= 2L so the circular
    correlation computed in the frequency domain equals the linear one.
    """
    q = as_vector(q, "q")
    k = as_vector(k, "k")
    if q.shape != k.shape:
        raise ShapeError("autocorrelation operands differ in length", q.shape, k.shape)
    L = q.shape[0]
    if L == 0:
        raise ShapeError("autocorrelation needs L >= 1", q.shape)
    n = next_power_of_two(2 * L)
    spectrum = np.fft.rfft(q, n) * np.conj(np.fft.rfft(k, n))
    return np.fft.irfft(spectrum, n)[:L]


def direct_autocorrelation(q, k) -> npt.NDArray[np.float64]:
    """O(L^2) reference for ``fft_autocorrelation``"""
    q = as_vector(q, "q")
    k = as_vector(k, "k")
    if q.shape != k.shape:
        raise ShapeError("autocorrelation operands differ in length", q.shape, k.shape)
    L = q.shape[0]
    return np.array([np.dot(q[tau:], k[:L - tau]) for tau in range(L)])


def check_square(M: Matrix, name: str = "mixer") -> int:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"{name} must be square", M.shape)
    return M.shape[0]


def ensure_finite(values: Union[Matrix, float], what: str):
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"{what} produced non-finite values")
    return values
