"""Head split/merge on the tape: (..., n, H*P) <-> (..., H, n, P)"""
import numpy as np

from ..engine.autodiff import Node, gather


def split_index(n: int, heads: int, head_dim: int) -> np.ndarray:
    rows = np.arange(n)[None, :, None]
    cols = np.arange(heads)[:, None, None] * head_dim + np.arange(head_dim)[None, None, :]
    return rows * (heads * head_dim) + cols


def merge_index(n: int, heads: int, head_dim: int) -> np.ndarray:
    h = np.arange(heads * head_dim) // head_dim
    p = np.arange(heads * head_dim) % head_dim
    return h[None, :] * (n * head_dim) + np.arange(n)[:, None] * head_dim + p[None, :]


def split_heads(V: Node, heads: int) -> Node:
    n, width = V.shape[-2:]
    return gather(V, split_index(n, heads, width // heads), batch_dims=V.ndim - 2)


def merge_heads(Y: Node) -> Node:
    heads, n, head_dim = Y.shape[-3:]
    return gather(Y, merge_index(n, heads, head_dim), batch_dims=Y.ndim - 3)


def broadcast_heads(V: Node) -> Node:
    """(..., n, D) -> (..., 1, n, D) so per-head projections broadcast"""
    n, width = V.shape[-2:]
    return gather(V, np.arange(n * width).reshape(1, n, width), batch_dims=V.ndim - 2)
