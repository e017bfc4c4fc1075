"""Softmax attention as an L x L mixer"""
import numpy as np

from ..core.exceptions import ShapeError
from ..engine import autodiff as ad
from ..engine.autodiff import Node
from ..engine.tensor import Matrix, as_matrix, matmul, softmax_rows
from .heads import broadcast_heads
from .spec import AttentionParams


def _projections(X_embedded: Matrix, params: AttentionParams, head: int):
    X = as_matrix(X_embedded, "X_embedded")
    if X.shape[1] != params.W_Q.shape[1]:
        raise ShapeError("embedding width does not match W_Q", X.shape, params.W_Q.shape)
    if not 0 <= head < params.heads:
        raise IndexError(f"head {head} out of range for {params.heads} heads")
    return matmul(X, params.W_Q[head]), matmul(X, params.W_K[head])


def build_attention_mixer(X_embedded: Matrix, params: AttentionParams, head: int) -> Matrix:
    """softmax(Q K^T / sqrt(P)) for one head"""
    Q, K = _projections(X_embedded, params, head)
    return softmax_rows(matmul(Q, K.T) * params.scale)


def attention_apply(X_embedded: Matrix, params: AttentionParams, head: int, V: Matrix,
                    block: int = 8) -> Matrix:
    """Streaming attention over key blocks with a running max and normaliser.

    Never forms the L x L matrix; equals ``build_attention_mixer(...) @ V``.
    """
    Q, K = _projections(X_embedded, params, head)
    V = as_matrix(V, "V")
    if V.shape[0] != K.shape[0]:
        raise ShapeError("values must have one row per key", V.shape, K.shape)

    L = Q.shape[0]
    running_max = np.full((L, 1), -np.inf)
    normaliser = np.zeros((L, 1))
    acc = np.zeros((L, V.shape[1]))
    for start in range(0, K.shape[0], block):
        scores = (Q @ K[start:start + block].T) * params.scale
        block_max = np.maximum(running_max, scores.max(axis=1, keepdims=True))
        rescale = np.exp(running_max - block_max)
        weights = np.exp(scores - block_max)
        normaliser = normaliser * rescale + weights.sum(axis=1, keepdims=True)
        acc = acc * rescale + weights @ V[start:start + block]
        running_max = block_max
    return acc / normaliser


def attention_scores(V: Node, W_Q: Node, W_K: Node) -> Node:
    """Per-head attention matrices on the tape: (..., n, D) -> (..., H, n, n)"""
    head_dim = W_Q.shape[-1]
    X = broadcast_heads(V)
    Q = X @ W_Q
    K = X @ W_K
    scores = (Q @ ad.swap_last(K)) * (1.0 / np.sqrt(head_dim))
    return ad.softmax(scores)
