"""Semiseparable mixers: diagonal state-space models as L x L matrices.

Convention: for i >= j

    m_ij = c_i^T (prod_{k=j+1..i} Abar_k) bbar_j

with the empty product (i == j) the identity, so m_ii = c_i^T bbar_i and the
materialized matrix agrees exactly with the recurrence

    h_t = Abar_t * h_{t-1} + bbar_t u_t,   y_t = c_t^T h_t.

Entries above the diagonal are zero.
"""
from typing import Tuple

import numpy as np

from ..core.exceptions import ShapeError
from ..engine import autodiff as ad
from ..engine.autodiff import Node
from ..engine.tensor import Matrix, as_matrix, matmul
from .spec import SemiseparableParams

LIMIT_THRESHOLD = 1e-8


def zoh_ratio(x: np.ndarray) -> np.ndarray:
    """(e^x - 1) / x with the limit 1 substituted for |x| < 1e-8"""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < LIMIT_THRESHOLD
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0, np.expm1(safe) / safe)


def zoh_ratio_grad(x: np.ndarray) -> np.ndarray:
    """d/dx of ``zoh_ratio``: (x e^x - e^x + 1) / x^2, series near 0"""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    exact = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    series = 0.5 + x / 3.0 + x * x / 8.0
    return np.where(small, series, exact)


def discretize_ssm(A: Matrix, Delta: Matrix, B: Matrix) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-order hold, elementwise per (t, d, n).

    A is (D, N), Delta is (L, D), B is (L, N); both outputs are (L, D, N):
    Abar = exp(Delta A), Bbar = ((exp(Delta A) - 1) / (Delta A)) Delta B.
    Leading batch axes on Delta and B are carried through.
    """
    A = np.asarray(A, dtype=np.float64)
    Delta = np.asarray(Delta, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or Delta.shape[-1] != A.shape[0] or B.shape[-1] != A.shape[1] \
            or Delta.shape[:-1] != B.shape[:-1]:
        raise ShapeError("discretize_ssm expects A (D,N), Delta (L,D), B (L,N)", A.shape, Delta.shape, B.shape)
    x = Delta[..., :, None] * A
    A_bar = np.exp(x)
    B_bar = zoh_ratio(x) * Delta[..., :, None] * B[..., None, :]
    return A_bar, B_bar


def step_delta(params: SemiseparableParams, X: np.ndarray) -> np.ndarray:
    z = X @ params.W_delta
    if params.b_delta is not None:
        z = z + params.b_delta
    return np.logaddexp(0.0, z)


def ssm_operands(params: SemiseparableParams, X: Matrix):
    """Per-step transitions, inputs and readouts: (L,D,N), (L,D,N), (L,N)"""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.W_B.shape[0]:
        raise ShapeError("X width does not match W_B", X.shape, params.W_B.shape)
    L = X.shape[-2]
    B = X @ params.W_B
    C = X @ params.W_C
    if params.discretized:
        A_bar, B_bar = discretize_ssm(params.A, step_delta(params, X), B)
    else:
        A = params.A
        if A.ndim == 3 and A.shape[0] != L:
            raise ShapeError("per-step transitions must have one slice per step", A.shape, X.shape)
        A_bar = np.broadcast_to(A, X.shape[:-2] + (L,) + A.shape[-2:])
        B_bar = np.broadcast_to(B[..., None, :], A_bar.shape)
    return A_bar, B_bar, C


def materialize_semiseparable(A_bar: np.ndarray, B_bar: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(..., L, D, N) transitions/inputs and (..., L, N) readouts -> (..., D, L, L)"""
    L, D, N = A_bar.shape[-3:]
    batch = A_bar.shape[:-3]
    M = np.zeros(batch + (D, L, L))
    for j in range(L):
        carried = B_bar[..., j, :, :]
        for i in range(j, L):
            if i > j:
                carried = carried * A_bar[..., i, :, :]
            M[..., :, i, j] = np.einsum("...dn,...n->...d", carried, C[..., i, :])
    return M


def build_semiseparable_mixer(params: SemiseparableParams, X: Matrix, head: int) -> Matrix:
    """Lower-triangular L x L mixer of head (state channel) ``head``.

    Entry (i, j) is c_i . (prod of A_bar over k = j+1..i) . b_j, matching the scan, so
    A = 0 in the direct form leaves only the diagonal.
    """
    X = as_matrix(X, "X")
    if not 0 <= head < params.width:
        raise IndexError(f"head {head} out of range for width {params.width}")
    A_bar, B_bar, C = ssm_operands(params, X)
    return materialize_semiseparable(A_bar[:, head:head + 1], B_bar[:, head:head + 1], C)[0]


def run_scan(A_bar: np.ndarray, B_bar: np.ndarray, C: np.ndarray, U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Recurrence over (..., L, D, N); returns outputs (..., L, D) and states"""
    L = A_bar.shape[-3]
    states = np.zeros(np.broadcast_shapes(A_bar.shape, B_bar.shape))
    h = np.zeros(states.shape[:-3] + states.shape[-2:])
    for t in range(L):
        h = A_bar[..., t, :, :] * h + B_bar[..., t, :, :] * U[..., t, :, None]
        states[..., t, :, :] = h
    y = np.einsum("...tdn,...tn->...td", states, C)
    return y, states


def scan_semiseparable(params: SemiseparableParams, X: Matrix, U: Matrix) -> Matrix:
    """O(L N D) recurrent evaluation; column d equals mixer(d) @ U[:, d]"""
    X = as_matrix(X, "X")
    U = as_matrix(U, "U")
    if U.shape != (X.shape[0], params.width):
        raise ShapeError("U must be (L, D)", U.shape, (X.shape[0], params.width))
    A_bar, B_bar, C = ssm_operands(params, X)
    return run_scan(A_bar, B_bar, C, U)[0]


def semiseparable_apply_materialized(params: SemiseparableParams, X: Matrix, U: Matrix) -> Matrix:
    U = as_matrix(U, "U")
    A_bar, B_bar, C = ssm_operands(params, as_matrix(X, "X"))
    M = materialize_semiseparable(A_bar, B_bar, C)
    return np.stack([matmul(M[d], U[:, d:d + 1])[:, 0] for d in range(M.shape[0])], axis=1)


def selective_scan(u: Node, delta: Node, A: Node, B: Node, C: Node) -> Node:
    """Discretize-and-scan primitive with a reverse-time backward scan.

    u, delta: (..., L, D); A: (D, N); B, C: (..., L, N). Output (..., L, D).
    """
    tape = u.tape
    if u.shape != delta.shape or B.shape != C.shape or A.ndim != 2 \
            or u.shape[-1] != A.shape[0] or B.shape[-1] != A.shape[1] or u.shape[:-1] != B.shape[:-1]:
        raise ShapeError("selective_scan operand shapes disagree", u.shape, delta.shape, A.shape, B.shape, C.shape)

    def forward(u_, delta_, A_, B_, C_):
        A_bar, B_bar = discretize_ssm(A_, delta_, B_)
        return run_scan(A_bar, B_bar, C_, u_)[0]

    def vjp(gy, u_, delta_, A_, B_, C_, out):
        x = delta_[..., :, None] * A_
        A_bar = np.exp(x)
        ratio = zoh_ratio(x)
        B_bar = ratio * delta_[..., :, None] * B_[..., None, :]
        _, states = run_scan(A_bar, B_bar, C_, u_)
        L = u_.shape[-2]

        g_C = np.einsum("...td,...tdn->...tn", gy, states)
        g_A_bar = np.zeros_like(states)
        g_B_bar = np.zeros_like(states)
        g_u = np.zeros_like(u_)
        carry = np.zeros(states.shape[:-3] + states.shape[-2:])
        for t in reversed(range(L)):
            g_h = C_[..., t, None, :] * gy[..., t, :, None] + carry
            if t > 0:
                g_A_bar[..., t, :, :] = g_h * states[..., t - 1, :, :]
            g_B_bar[..., t, :, :] = g_h * u_[..., t, :, None]
            g_u[..., t, :] = np.sum(g_h * B_bar[..., t, :, :], axis=-1)
            carry = A_bar[..., t, :, :] * g_h

        g_x = g_A_bar * A_bar + g_B_bar * zoh_ratio_grad(x) * delta_[..., :, None] * B_[..., None, :]
        g_delta = np.sum(g_B_bar * ratio * B_[..., None, :], axis=-1) + np.sum(g_x * A_, axis=-1)
        g_B = np.sum(g_B_bar * ratio * delta_[..., :, None], axis=-2)
        g_A = np.sum(g_x * delta_[..., :, None], axis=tuple(range(g_x.ndim - 2)))
        return g_u, g_delta, g_A, g_B, g_C

    return tape.record("selective_scan", (u, delta, A, B, C), forward, vjp)
