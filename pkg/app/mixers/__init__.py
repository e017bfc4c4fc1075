from .spec import (
    AttentionParams,
    DenseParams,
    MaskedLowRankParams,
    MixerFamily,
    MixerSpec,
    SemiseparableParams,
    ToeplitzParams,
)
from .registry import materialize

__all__ = [
    "AttentionParams",
    "DenseParams",
    "MaskedLowRankParams",
    "MixerFamily",
    "MixerSpec",
    "SemiseparableParams",
    "ToeplitzParams",
    "materialize",
]
