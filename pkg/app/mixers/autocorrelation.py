"""Autocorrelation mixers: symmetric Toeplitz matrices of lagged correlations"""
import numpy as np

from ..core.exceptions import ShapeError
from ..engine import autodiff as ad
from ..engine.autodiff import Node
from ..engine.tensor import Matrix, as_matrix, fft_autocorrelation, next_power_of_two


def lag_scores(Q: Matrix, K: Matrix) -> np.ndarray:
    """Per-lag autocorrelation averaged over the P columns"""
    Q = as_matrix(Q, "Q")
    K = as_matrix(K, "K")
    if Q.shape != K.shape:
        raise ShapeError("Q and K must have the same shape", Q.shape, K.shape)
    return np.mean([fft_autocorrelation(Q[:, p], K[:, p]) for p in range(Q.shape[1])], axis=0)


def lag_index(L: int) -> np.ndarray:
    return np.abs(np.arange(L)[:, None] - np.arange(L)[None, :])


def build_autocorr_mixer(Q: Matrix, K: Matrix) -> Matrix:
    """m_ij = ACorr_|i-j| with every lag kept"""
    return lag_scores(Q, K)[lag_index(Q.shape[0])]


def autocorr_apply(Q: Matrix, K: Matrix, V: Matrix) -> Matrix:
    """Symmetric Toeplitz product via circulant embedding and the FFT"""
    V = as_matrix(V, "V")
    acorr = lag_scores(Q, K)
    L = acorr.shape[0]
    if V.shape[0] != L:
        raise ShapeError("values must have one row per lag", V.shape, (L,))
    n = next_power_of_two(2 * L)
    column = np.zeros(n)
    column[:L] = acorr
    column[n - L + 1:] = acorr[1:][::-1]
    spectrum = np.fft.rfft(column)[:, None] * np.fft.rfft(V, n, axis=0)
    return np.fft.irfft(spectrum, n, axis=0)[:L]


def autocorr_mixers(Q: Node, K: Node) -> Node:
    """(..., H, n, P) query/key pairs -> (..., H, n, n) autocorrelation mixers.

    The lag-tau score is the sum of the tau-th subdiagonal of Q K^T, so the
    construction is a gather of that product into a (lag, t) table, a masked
    row sum and a gather back onto |i - j|.
    """
    n, head_dim = Q.shape[-2:]
    G = Q @ ad.swap_last(K)
    lag = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    valid = (lag + t) < n
    table_index = np.where(valid, np.minimum(lag + t, n - 1) * n + t, 0)
    table = ad.gather(G, table_index, batch_dims=G.ndim - 2) * valid.astype(np.float64)
    scores = ad.sum(table, axis=-1, keepdims=True) * (1.0 / head_dim)
    return ad.gather(scores, lag_index(n), batch_dims=scores.ndim - 2)
