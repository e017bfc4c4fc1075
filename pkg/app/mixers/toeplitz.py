"""Causal banded Toeplitz mixers (dilated depth-wise convolution)"""
import numpy as np

from ..engine import autodiff as ad
from ..engine.autodiff import Node
from ..engine.tensor import Matrix, as_matrix
from .spec import ToeplitzParams


def toeplitz_index(L: int, kernel_size: int, dilation: int) -> np.ndarray:
    """Kernel tap used by each entry; ``kernel_size`` marks a structural zero"""
    offset = np.arange(L)[:, None] - np.arange(L)[None, :]
    tap = offset // dilation
    on_band = (offset >= 0) & (offset % dilation == 0) & (tap < kernel_size)
    return np.where(on_band, tap, kernel_size)


def build_toeplitz_mixer(params: ToeplitzParams, L: int) -> Matrix:
    """m_ij = w_k when (i - j) mod d == 0 and k = (i - j)/d + 1 <= K, else 0"""
    params.check_length(L)
    padded = np.append(params.kernel, 0.0)
    return padded[toeplitz_index(L, params.kernel_size, params.dilation)]


def conv_apply(params: ToeplitzParams, U: Matrix) -> Matrix:
    """Sliding-window causal dilated convolution, O(L K P)"""
    U = as_matrix(U, "U")
    L = U.shape[0]
    params.check_length(L)
    out = np.zeros_like(U)
    for k, w in enumerate(params.kernel):
        shift = k * params.dilation
        out[shift:] += w * U[:L - shift]
    return out


def toeplitz_mixers(kernel: Node, L: int, dilation: int) -> Node:
    """(H, K) kernels -> (H, L, L) banded matrices on the tape"""
    heads, kernel_size = kernel.shape
    ToeplitzParams(np.zeros(kernel_size), dilation).check_length(L)
    taps = toeplitz_index(L, kernel_size, dilation)
    mask = (taps < kernel_size).astype(np.float64)
    flat = np.arange(heads)[:, None, None] * kernel_size + np.minimum(taps, kernel_size - 1)[None]
    return ad.gather(kernel, flat) * mask
