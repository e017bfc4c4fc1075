"""JustDense conversion: every structured mixer becomes a trainable dense matrix"""
import logging
from collections import OrderedDict
from dataclasses import replace
from typing import Dict, Optional

import numpy as np

from ..core.exceptions import UnknownMixerError
from ..engine.autodiff import Parameter
from ..mixers.dense import InitKind, InitPolicy, make_dense_mixer
from ..mixers.spec import MixerFamily, ToeplitzParams
from ..mixers.toeplitz import build_toeplitz_mixer
from .sequence import SequenceModel, materialize_mixers, parameter_census

logger = logging.getLogger(__name__)


def _toeplitz_sources(model: SequenceModel) -> Dict[str, np.ndarray]:
    sources = {}
    for prefix, block in model.mixer_prefixes():
        if block.mixer is not MixerFamily.TOEPLITZ:
            return {}
        kernels = model.params[f"{prefix}.mixer.kernel"].value
        sources[prefix] = np.stack([
            build_toeplitz_mixer(ToeplitzParams(kernel, block.dilation), block.mixer_dim) for kernel in kernels])
    return sources


def distill_sources(model: SequenceModel, calibration: Optional[np.ndarray]) -> Dict[str, np.ndarray]:
    """Materialized mixers to copy, averaged over the calibration batch"""
    if calibration is not None:
        return materialize_mixers(model, calibration)
    sources = _toeplitz_sources(model)
    if not sources:
        raise ValueError("distill initialization of input-dependent mixers needs a calibration batch")
    return sources


def convert_to_dense(model: SequenceModel, init: InitPolicy, calibration: Optional[np.ndarray] = None,
                     rng: Optional[np.random.Generator] = None) -> SequenceModel:
    """Copy of ``model`` with each block's mixer replaced by independent (H, n, n) dense mixers.

    Non-mixer parameters are copied unchanged. Distill copies the materialized
    structured mixers evaluated on ``calibration`` (mean over the batch). Dense
    mixers replacing Toeplitz or semiseparable ones keep the lower-triangular mask.
    """
    for prefix, block in model.mixer_prefixes():
        if not block.mixer.structured:
            raise UnknownMixerError(f"{prefix} already holds a dense mixer")
    rng = rng if rng is not None else np.random.default_rng()
    sources = distill_sources(model, calibration) if init.kind is InitKind.DISTILL else {}

    converted = set()
    params: "OrderedDict[str, Parameter]" = OrderedDict()
    for name, param in model.params.items():
        prefix, _, rest = name.partition(".mixer.")
        if not rest:
            params[name] = param.copy()
            continue
        if prefix in converted:
            continue
        block = dict(model.mixer_prefixes())[prefix]
        policy = InitPolicy.distill(sources[prefix]) if init.kind is InitKind.DISTILL else init
        dense_name = f"{prefix}.dense"
        params[dense_name] = make_dense_mixer(block.mixer_dim, policy, rng, dense_name, heads=block.mixer_heads)
        converted.add(prefix)

    # causal families stay causal after conversion
    blocks = [replace(block, mixer=MixerFamily.DENSE, feature_axis=block.feature_axis,
                      causal_dense=block.causal_dense or block.mixer.causal) for block in model.blocks]
    dense = SequenceModel(model.config, model.front_end, blocks, params, model.stages, model.bidirectional)

    before, after = parameter_census(model), parameter_census(dense)
    logger.info(f"Converted {model.config.template} to dense mixers ({init.kind.value} init): "
                f"mixer parameters {before['mixer']} -> {after['mixer']}, total {before['total']} -> {after['total']}")
    return dense
