"""Mixer families and their parameter payloads"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from ..core.exceptions import ShapeError, UnknownMixerError


class MixerFamily(str, Enum):
    DENSE = "dense"
    ATTENTION = "attention"
    TOEPLITZ = "toeplitz"
    AUTOCORRELATION = "autocorrelation"
    SEMISEPARABLE = "semiseparable"
    MASKED_LOWRANK = "masked-lowrank"

    @classmethod
    def parse(cls, value: Union[str, "MixerFamily"]) -> "MixerFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UnknownMixerError(f"unknown mixer family {value!r}") from None

    @property
    def structured(self) -> bool:
        return self is not MixerFamily.DENSE

    @property
    def causal(self) -> bool:
        """Lower-triangular by construction"""
        return self in (MixerFamily.TOEPLITZ, MixerFamily.SEMISEPARABLE)


@dataclass(frozen=True)
class AttentionParams:
    """Per-head query/key projections, stacked as (H, D, P)"""
    W_Q: np.ndarray
    W_K: np.ndarray

    def __post_init__(self):
        if self.W_Q.ndim != 3 or self.W_Q.shape != self.W_K.shape:
            raise ShapeError("W_Q and W_K must both be (H, D, P)", self.W_Q.shape, self.W_K.shape)

    @property
    def heads(self) -> int:
        return self.W_Q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.W_Q.shape[2]

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.head_dim)


@dataclass(frozen=True)
class ToeplitzParams:
    kernel: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if kernel.ndim != 1 or kernel.size < 1:
            raise ShapeError("Toeplitz kernel must be a non-empty vector", kernel.shape)
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        object.__setattr__(self, "kernel", kernel)

    @property
    def kernel_size(self) -> int:
        return int(self.kernel.size)

    @property
    def span(self) -> int:
        return self.dilation * (self.kernel_size - 1)

    def check_length(self, L: int):
        if self.span >= L:
            raise ShapeError(
                f"band d*(K-1)={self.span} does not fit in length L={L} "
                f"(K={self.kernel_size}, d={self.dilation})")


@dataclass(frozen=True)
class SemiseparableParams:
    """State-space parameters for a diagonal-transition SSM.

    With ``W_delta`` set (Mamba form) ``A`` is the continuous (D, N) matrix and
    each step is discretized through delta = softplus(X W_delta + b_delta). Without
    it (direct form) ``A`` already holds the per-step transitions, either (D, N)
    shared by every step or (L, D, N).
    """
    A: np.ndarray
    W_B: np.ndarray
    W_C: np.ndarray
    W_delta: Optional[np.ndarray] = None
    b_delta: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.W_B.shape != self.W_C.shape or self.W_B.ndim != 2:
            raise ShapeError("W_B and W_C must both be (C, N)", self.W_B.shape, self.W_C.shape)
        if self.A.shape[-1] != self.state_size:
            raise ShapeError("A must end in the state size N", self.A.shape, self.W_B.shape)
        if self.W_delta is not None:
            if self.A.ndim != 2:
                raise ShapeError("continuous A must be (D, N)", self.A.shape)
            if self.W_delta.shape != (self.W_B.shape[0], self.A.shape[0]):
                raise ShapeError("W_delta must be (C, D)", self.W_delta.shape, self.A.shape)

    @property
    def state_size(self) -> int:
        return self.W_B.shape[1]

    @property
    def width(self) -> int:
        return self.A.shape[-2]

    @property
    def discretized(self) -> bool:
        return self.W_delta is not None


@dataclass(frozen=True)
class MaskedLowRankParams:
    W_up: np.ndarray
    W_down: np.ndarray

    def __post_init__(self):
        D, U = self.W_up.shape
        if U < 1 or self.W_down.shape != (U, D):
            raise ShapeError("W_up must be (D, U) and W_down (U, D)", self.W_up.shape, self.W_down.shape)

    @property
    def hidden(self) -> int:
        return self.W_up.shape[1]


@dataclass(frozen=True)
class DenseParams:
    """Trainable dense mixers stacked per head, (H, n, n)"""
    M: np.ndarray
    causal: bool = False

    def __post_init__(self):
        if self.M.ndim != 3 or self.M.shape[1] != self.M.shape[2]:
            raise ShapeError("dense mixers must be (H, n, n)", self.M.shape)


_PAYLOADS = {
    MixerFamily.DENSE: DenseParams,
    MixerFamily.ATTENTION: AttentionParams,
    MixerFamily.AUTOCORRELATION: AttentionParams,
    MixerFamily.TOEPLITZ: ToeplitzParams,
    MixerFamily.SEMISEPARABLE: SemiseparableParams,
    MixerFamily.MASKED_LOWRANK: MaskedLowRankParams,
}

MixerParams = Union[DenseParams, AttentionParams, ToeplitzParams, SemiseparableParams, MaskedLowRankParams]


@dataclass(frozen=True)
class MixerSpec:
    """One mixer family, its parameters and the length of the axis it mixes"""
    family: MixerFamily
    dim: int
    params: MixerParams

    def __post_init__(self):
        family = MixerFamily.parse(self.family)
        object.__setattr__(self, "family", family)
        expected = _PAYLOADS[family]
        if not isinstance(self.params, expected):
            raise UnknownMixerError(
                f"{family.value} mixer needs {expected.__name__}, got {type(self.params).__name__}")
        if self.dim < 1:
            raise ShapeError(f"mixing dimension must be positive, got {self.dim}")
        if family is MixerFamily.TOEPLITZ:
            self.params.check_length(self.dim)
