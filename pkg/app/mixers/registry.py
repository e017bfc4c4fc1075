from typing import Optional

import numpy as np

from ..core.exceptions import UnknownMixerError
from ..engine.tensor import Matrix, as_matrix
from .attention import build_attention_mixer
from .autocorrelation import build_autocorr_mixer
from .lowrank import build_masked_lowrank_mixer
from .semiseparable import build_semiseparable_mixer
from .spec import MixerFamily, MixerSpec
from .toeplitz import build_toeplitz_mixer


def materialize(spec: MixerSpec, X: Optional[Matrix] = None, head: int = 0, row: Optional[int] = None) -> Matrix:
    """Explicit mixing matrix of ``spec`` (input-dependent families need ``X``)"""
    family = spec.family
    if family is MixerFamily.DENSE:
        M = spec.params.M[head]
        return np.tril(M) if spec.params.causal else M.copy()
    if family is MixerFamily.TOEPLITZ:
        return build_toeplitz_mixer(spec.params, spec.dim)
    if X is None:
        raise ValueError(f"{family.value} mixers depend on the input; pass X")
    X = as_matrix(X, "X")
    if family is MixerFamily.ATTENTION:
        return build_attention_mixer(X, spec.params, head)
    if family is MixerFamily.AUTOCORRELATION:
        return build_autocorr_mixer(X @ spec.params.W_Q[head], X @ spec.params.W_K[head])
    if family is MixerFamily.SEMISEPARABLE:
        return build_semiseparable_mixer(spec.params, X, head)
    if family is MixerFamily.MASKED_LOWRANK:
        return build_masked_lowrank_mixer(spec.params, X, row)
    raise UnknownMixerError(f"cannot materialize {family!r}")
