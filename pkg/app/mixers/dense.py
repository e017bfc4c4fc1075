"""The JustDense replacement: unconstrained trainable mixers"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from ..core.exceptions import ShapeError
from ..engine.autodiff import Parameter
from ..engine.tensor import Matrix, check_square, ensure_finite, matmul


class InitKind(str, Enum):
    ZERO = "zero"
    SCALED = "scaled"
    DISTILL = "distill"


@dataclass(frozen=True)
class InitPolicy:
    kind: InitKind
    source: Optional[np.ndarray] = None

    @classmethod
    def zero(cls) -> "InitPolicy":
        return cls(InitKind.ZERO)

    @classmethod
    def scaled(cls) -> "InitPolicy":
        return cls(InitKind.SCALED)

    @classmethod
    def distill(cls, source: Matrix = None) -> "InitPolicy":
        return cls(InitKind.DISTILL, None if source is None else np.asarray(source, dtype=np.float64))

    @classmethod
    def parse(cls, value: str) -> "InitPolicy":
        return cls(InitKind(str(value).strip().lower()))


def apply_mixer(M: Matrix, V: Matrix) -> Matrix:
    n = check_square(M)
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] != n:
        raise ShapeError("values must have one row per mixer row", M.shape, V.shape)
    return matmul(M, V)


def make_dense_mixer(n: int, init: InitPolicy, rng: np.random.Generator = None,
                     name: str = "dense", heads: Optional[int] = None) -> Parameter:
    """A trainable n x n mixer, or (heads, n, n) when ``heads`` is given.

    ScaledUniform draws from U[-1/sqrt(n), 1/sqrt(n)]; Distill copies ``init.source``.
    """
    if n < 1:
        raise ShapeError(f"dense mixer size must be positive, got {n}")
    shape = (n, n) if heads is None else (heads, n, n)
    if init.kind is InitKind.ZERO:
        value = np.zeros(shape)
    elif init.kind is InitKind.SCALED:
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / np.sqrt(n)
        value = rng.uniform(-bound, bound, size=shape)
    else:
        if init.source is None:
            raise ValueError("distill initialization needs a source mixer")
        value = ensure_finite(np.array(init.source, dtype=np.float64), f"distill source for {name}")
        if value.shape != shape:
            raise ShapeError("distill source does not match the dense mixer", value.shape, shape)
    return Parameter(name, value)
