"""Front-end and channel-mixing layers, as tape graphs with numpy wrappers"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ShapeError
from ..engine import autodiff as ad
from ..engine.autodiff import Node, Tape
from ..engine.tensor import Matrix, as_matrix, matmul

NORM_EPS = 1e-5


class Normalization(str, Enum):
    LAYER = "layer"
    BATCH = "batch"
    NONE = "none"


@dataclass(frozen=True)
class DownsampleStage:
    """One strided Conv1d: output position p reads input rows p*stride .. p*stride+kernel_size-1"""
    kernel_size: int
    stride: int

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1:
            raise ValueError(f"kernel size and stride must be >= 1, got {self.kernel_size}, {self.stride}")

    def output_length(self, length: int) -> int:
        if length % self.stride:
            raise ShapeError(f"stride {self.stride} does not divide current length {length}")
        return length // self.stride


def parse_stages(text: str) -> List[DownsampleStage]:
    """``"2x2,2x2"`` -> two stages of kernel 2, stride 2; empty -> no stages"""
    stages = []
    for item in filter(None, (part.strip() for part in text.split(","))):
        kernel, _, stride = item.lower().partition("x")
        stages.append(DownsampleStage(int(kernel), int(stride or kernel)))
    return stages


def embed(X: Matrix, W_V: Matrix, W_pos: Matrix) -> Matrix:
    """f_X(X) = X W_V + W_pos"""
    X = as_matrix(X, "X")
    out = matmul(X, W_V)
    W_pos = np.asarray(W_pos, dtype=np.float64)
    if W_pos.shape != out.shape:
        raise ShapeError("W_pos must match the embedded sequence", W_pos.shape, out.shape)
    return out + W_pos


def patchify(X: np.ndarray, patch_len: int) -> np.ndarray:
    """(..., L, C) -> (..., L/l, l*C); each row holds l consecutive steps, channels within a step"""
    X = np.asarray(X, dtype=np.float64)
    L, C = X.shape[-2:]
    if patch_len < 1 or L % patch_len:
        raise ShapeError(f"patch length {patch_len} does not divide L={L}")
    return X.reshape(X.shape[:-2] + (L // patch_len, patch_len * C))


def channel_mixer_ffn(Y: Matrix, W_up: Matrix, W_down: Matrix) -> Matrix:
    """Row-wise ReLU(y W_up) W_down"""
    Y = as_matrix(Y, "Y")
    return matmul(np.maximum(matmul(Y, W_up), 0.0), W_down)


def ffn_node(Y: Node, W_up: Node, W_down: Node) -> Node:
    return ad.relu(Y @ W_up) @ W_down


def layer_norm(x: Node, gamma: Optional[Node] = None, beta: Optional[Node] = None) -> Node:
    centred = x - ad.mean(x, axis=-1, keepdims=True)
    variance = ad.mean(centred * centred, axis=-1, keepdims=True)
    out = centred * ad.power(variance + NORM_EPS, -0.5)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def batch_norm(x: Node, gamma: Optional[Node] = None, beta: Optional[Node] = None) -> Node:
    """Per-feature normalization over every axis but the last (batch and length)"""
    axes = tuple(range(x.ndim - 1))
    centred = x - ad.mean(x, axis=axes, keepdims=True)
    variance = ad.mean(centred * centred, axis=axes, keepdims=True)
    out = centred * ad.power(variance + NORM_EPS, -0.5)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def normalize(kind: Normalization, x: Node, gamma: Optional[Node], beta: Optional[Node]) -> Node:
    if kind is Normalization.LAYER:
        return layer_norm(x, gamma, beta)
    if kind is Normalization.BATCH:
        return batch_norm(x, gamma, beta)
    return x


def per_variable(X: Node) -> Node:
    """(B, L, C) -> (B, C, L, 1): every variable becomes its own 1-channel series"""
    L, C = X.shape[-2:]
    index = (np.arange(L)[None, :] * C + np.arange(C)[:, None])[:, :, None]
    return ad.gather(X, index, batch_dims=X.ndim - 2)


def unfold_index(length: int, width: int, stage: DownsampleStage) -> Tuple[np.ndarray, np.ndarray]:
    """Window index (L', k*width) into a (length, width) block, plus the zero-padding mask"""
    out_len = stage.output_length(length)
    p = np.arange(out_len)[:, None, None]
    j = np.arange(stage.kernel_size)[None, :, None]
    c = np.arange(width)[None, None, :]
    rows = p * stage.stride + j
    valid = np.broadcast_to(rows < length, (out_len, stage.kernel_size, width))
    index = np.minimum(rows, length - 1) * width + c
    return index.reshape(out_len, -1), valid.reshape(out_len, -1).astype(np.float64)


def downsample_node(X: Node, weights: Sequence[Node], stages: Sequence[DownsampleStage]) -> Node:
    """Stacked strided convolutions, each followed by per-feature batch normalization.

    X is (B, L, C); the result is (B, C, L', D) with every variable embedded separately.
    """
    if len(weights) != len(stages) or not stages:
        raise ShapeError("need one weight per downsampling stage", (len(weights),), (len(stages),))
    Z = per_variable(X)
    for W, stage in zip(weights, stages):
        length, width = Z.shape[-2:]
        index, valid = unfold_index(length, width, stage)
        if W.shape[0] != stage.kernel_size * width:
            raise ShapeError("stage weight must be (kernel*width_in, width_out)", W.shape, (stage.kernel_size * width,))
        windows = ad.gather(Z, index, batch_dims=Z.ndim - 2) * valid
        Z = batch_norm(windows @ W)
    return Z


def downsample_embed(X: Matrix, stages: Sequence[Tuple[np.ndarray, int]]) -> np.ndarray:
    """Per-variable embedding of one L x C window: (C, L', D).

    ``stages`` lists (weight, stride) pairs, weight shaped (kernel*width_in, width_out)
    or a flat kernel for a 1 -> 1 stage.
    """
    X = as_matrix(X, "X")
    tape = Tape()
    weights, specs = [], []
    width = 1
    for weight, stride in stages:
        weight = np.asarray(weight, dtype=np.float64)
        if weight.ndim == 1:
            weight = weight[:, None]
        specs.append(DownsampleStage(weight.shape[0] // width, stride))
        weights.append(tape.constant(weight))
        width = weight.shape[1]
    return downsample_node(tape.constant(X[None]), weights, specs).value[0]
