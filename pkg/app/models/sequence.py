"""Sequence-model templates built from front-ends, blocks and a linear head"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core.exceptions import ShapeError, UnknownMixerError
from ..engine import autodiff as ad
from ..engine.autodiff import Node, Parameter, Tape
from ..engine.tensor import Shape
from ..mixers.spec import MixerFamily
from .blocks import BlockConfig, Trace, bidirectional_compose, forward_block, init_block_params
from .layers import DownsampleStage, Normalization, downsample_node, parse_stages, patchify

logger = logging.getLogger(__name__)


class Task(str, Enum):
    FORECAST = "forecast"
    IMPUTATION = "imputation"
    CLASSIFICATION = "classification"


class FrontEnd(str, Enum):
    LINEAR = "linear-embed"
    PATCHIFY = "patchify"
    DOWNSAMPLE = "downsample-embed"
    TRANSPOSE = "transpose"


TEMPLATES = (
    "attention",
    "patched-attention",
    "channel-attention",
    "toeplitz",
    "semiseparable",
    "bidirectional-semiseparable",
)


@dataclass(frozen=True)
class TemplateConfig:
    """Everything needed to build one model template"""
    template: str = "attention"
    task: Task = Task.FORECAST
    lookback: int = 32
    channels: int = 2
    horizon: int = 8
    n_classes: int = 2
    width: int = 8
    heads: int = 2
    n_blocks: int = 1
    ffn_hidden: int = 16
    mixer: Optional[str] = None
    patch_len: int = 4
    kernel_size: int = 3
    dilation: int = 1
    state_size: int = 4
    downsample: str = ""
    normalization: Optional[str] = None
    causal_dense: bool = False

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise UnknownMixerError(f"unknown template {self.template!r}; choose from {', '.join(TEMPLATES)}")
        object.__setattr__(self, "task", Task(self.task))

    @property
    def out_shape(self) -> Tuple[int, ...]:
        if self.task is Task.CLASSIFICATION:
            return (self.n_classes,)
        if self.task is Task.IMPUTATION:
            return (self.lookback, self.channels)
        return (self.horizon, self.channels)


@dataclass
class SequenceModel:
    config: TemplateConfig
    front_end: FrontEnd
    blocks: List[BlockConfig]
    params: "OrderedDict[str, Parameter]"
    stages: Tuple[DownsampleStage, ...] = ()
    bidirectional: bool = False

    @property
    def per_variable(self) -> bool:
        return self.front_end is FrontEnd.DOWNSAMPLE

    @property
    def out_shape(self) -> Tuple[int, ...]:
        return self.config.out_shape

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def block_prefixes(self, index: int) -> List[str]:
        if self.bidirectional:
            return [f"blocks.{index}.fwd", f"blocks.{index}.rev"]
        return [f"blocks.{index}"]

    def mixer_prefixes(self) -> List[Tuple[str, BlockConfig]]:
        return [(prefix, block) for i, block in enumerate(self.blocks) for prefix in self.block_prefixes(i)]

    def size(self) -> int:
        return sum(p.size for p in self.params.values())


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _template_layout(cfg: TemplateConfig):
    """Front-end, token count, block head layout, default mixer and normalization"""
    L, C, D = cfg.lookback, cfg.channels, cfg.width
    name = cfg.template
    stages: Tuple[DownsampleStage, ...] = ()
    if name == "attention":
        mixer = MixerFamily.parse(cfg.mixer or "attention")
        if mixer not in (MixerFamily.ATTENTION, MixerFamily.AUTOCORRELATION):
            raise UnknownMixerError(f"the attention template takes attention or autocorrelation, not {mixer.value}")
        return FrontEnd.LINEAR, L, cfg.heads, mixer, Normalization.LAYER, stages
    if name == "patched-attention":
        if L % cfg.patch_len:
            raise ShapeError(f"patch length {cfg.patch_len} does not divide lookback {L}")
        return FrontEnd.PATCHIFY, L // cfg.patch_len, cfg.heads, MixerFamily.ATTENTION, Normalization.LAYER, stages
    if name == "channel-attention":
        return FrontEnd.TRANSPOSE, C, cfg.heads, MixerFamily.MASKED_LOWRANK, Normalization.LAYER, stages
    if name == "toeplitz":
        stages = tuple(parse_stages(cfg.downsample)) or (DownsampleStage(cfg.patch_len, cfg.patch_len),)
        n = L
        for stage in stages:
            n = stage.output_length(n)
        return FrontEnd.DOWNSAMPLE, n, D, MixerFamily.TOEPLITZ, Normalization.BATCH, stages
    return FrontEnd.LINEAR, L, D, MixerFamily.SEMISEPARABLE, Normalization.LAYER, stages


def build_model(cfg: TemplateConfig, rng: np.random.Generator) -> SequenceModel:
    """Fresh model for ``cfg.template`` with parameters drawn from ``rng``"""
    front_end, n, heads, mixer, norm, stages = _template_layout(cfg)
    if cfg.normalization:
        norm = Normalization(cfg.normalization)
    L, C, D = cfg.lookback, cfg.channels, cfg.width
    shape = Shape.from_heads(n, C, D, heads)
    block = BlockConfig(shape=shape, mixer=mixer, ffn_hidden=cfg.ffn_hidden, normalization=norm,
                        causal_dense=cfg.causal_dense, kernel_size=cfg.kernel_size,
                        dilation=cfg.dilation, state_size=cfg.state_size)
    bidirectional = cfg.template == "bidirectional-semiseparable"
    params: "OrderedDict[str, Parameter]" = OrderedDict()

    def add(name: str, value: np.ndarray):
        params[name] = Parameter(name, value)

    if front_end is FrontEnd.LINEAR:
        add("embed.W_V", _uniform(rng, (C, D), C))
        if mixer is not MixerFamily.SEMISEPARABLE:
            add("embed.W_pos", rng.normal(0.0, 0.02, size=(L, D)))
    elif front_end is FrontEnd.PATCHIFY:
        add("embed.W_V", _uniform(rng, (cfg.patch_len * C, D), cfg.patch_len * C))
        add("embed.W_pos", rng.normal(0.0, 0.02, size=(n, D)))
    elif front_end is FrontEnd.TRANSPOSE:
        add("embed.W_V", _uniform(rng, (L, D), L))
    else:
        width = 1
        for i, stage in enumerate(stages):
            add(f"downsample.{i}.W", _uniform(rng, (stage.kernel_size * width, D), stage.kernel_size * width))
            width = D

    blocks = []
    model = SequenceModel(cfg, front_end, blocks, params, stages, bidirectional)
    for i in range(cfg.n_blocks):
        blocks.append(block)
        for prefix in model.block_prefixes(i):
            params.update(init_block_params(block, prefix, rng))

    head_in = n * D
    if front_end is FrontEnd.DOWNSAMPLE and cfg.task is Task.CLASSIFICATION:
        head_in = C * n * D
    head_out = cfg.out_shape[0] if front_end is FrontEnd.DOWNSAMPLE and cfg.task is not Task.CLASSIFICATION \
        else int(np.prod(cfg.out_shape))
    add("head.W", _uniform(rng, (head_in, head_out), head_in))
    add("head.b", np.zeros(head_out))
    logger.info(f"Built {cfg.template} model ({front_end.value}, {cfg.n_blocks} blocks, "
                f"{model.size()} parameters)")
    return model


def _embed(model: SequenceModel, tape: Tape, X: np.ndarray) -> Node:
    def p(name):
        return tape.param(model.params[name])

    cfg = model.config
    if model.front_end is FrontEnd.LINEAR:
        V = tape.constant(X) @ p("embed.W_V")
        if "embed.W_pos" in model.params:
            V = V + p("embed.W_pos")
        return V
    if model.front_end is FrontEnd.PATCHIFY:
        return tape.constant(patchify(X, cfg.patch_len)) @ p("embed.W_V") + p("embed.W_pos")
    if model.front_end is FrontEnd.TRANSPOSE:
        return tape.constant(np.swapaxes(X, -1, -2)) @ p("embed.W_V")
    weights = [p(f"downsample.{i}.W") for i in range(len(model.stages))]
    return downsample_node(tape.constant(X), weights, model.stages)


def _head(model: SequenceModel, V: Node) -> Node:
    tape = V.tape
    W = tape.param(model.params["head.W"])
    b = tape.param(model.params["head.b"])
    cfg = model.config
    if model.per_variable and cfg.task is not Task.CLASSIFICATION:
        n, D = V.shape[-2:]
        flat = ad.gather(V, np.arange(n * D).reshape(1, n * D), batch_dims=V.ndim - 2)
        out = flat @ W + b
        steps, C = cfg.out_shape
        # (B, C, 1, T) -> (B, T, C)
        index = np.arange(C)[None, :] * steps + np.arange(steps)[:, None]
        return ad.gather(out, index, batch_dims=1)
    features = int(np.prod(V.shape[1:]))
    flat = ad.gather(V, np.arange(features).reshape(1, features), batch_dims=1)
    out = flat @ W + b
    size = int(np.prod(cfg.out_shape))
    return ad.gather(out, np.arange(size).reshape(cfg.out_shape), batch_dims=1)


def forward(model: SequenceModel, tape: Tape, X: np.ndarray, trace: Optional[Trace] = None) -> Node:
    """(B, L, C) windows -> (B, *out_shape) predictions on ``tape``"""
    X = np.asarray(X, dtype=np.float64)
    cfg = model.config
    if X.ndim != 3 or X.shape[1:] != (cfg.lookback, cfg.channels):
        raise ShapeError("model input must be (batch, L, C)", X.shape, (cfg.lookback, cfg.channels))
    V = _embed(model, tape, X)
    for i, block in enumerate(model.blocks):
        if model.bidirectional:
            V = bidirectional_compose(block, model.params, f"blocks.{i}", V, trace)
        else:
            V = forward_block(block, model.params, f"blocks.{i}", V, trace)
    return _head(model, V)


def predict(model: SequenceModel, X: np.ndarray) -> np.ndarray:
    return forward(model, Tape(), X).value


def loss_node(model: SequenceModel, tape: Tape, X: np.ndarray, target: np.ndarray,
              mask: Optional[np.ndarray] = None) -> Node:
    """Task loss: MSE (masked for imputation) or softmax cross-entropy"""
    pred = forward(model, tape, X)
    if model.config.task is Task.CLASSIFICATION:
        return ad.cross_entropy_loss(pred, target)
    return ad.mse_loss(pred, target, mask)


def _component(name: str) -> str:
    if name.startswith(("embed.", "downsample.")):
        return "embedding"
    if name.startswith("head."):
        return "head"
    parts = name.split(".")
    if "mixer" in parts or parts[-1] == "dense":
        return "mixer"
    if "norm1" in parts or "norm2" in parts:
        return "norm"
    return "channel"


def parameter_census(model: SequenceModel) -> Dict[str, int]:
    """Parameter counts per component plus the total"""
    census = {"embedding": 0, "mixer": 0, "channel": 0, "norm": 0, "head": 0}
    for name, param in model.params.items():
        census[_component(name)] += param.size
    census["total"] = sum(census.values())
    return census


def materialize_mixers(model: SequenceModel, X: np.ndarray) -> Dict[str, np.ndarray]:
    """Per-block mixers (H, n, n), averaged over the batch for input-dependent families"""
    trace: Trace = {}
    forward(model, Tape(), X, trace)
    mixers = {}
    for prefix, block in model.mixer_prefixes():
        stacked = trace[prefix]
        n = block.mixer_dim
        mixers[prefix] = stacked.reshape((-1, block.mixer_heads, n, n)).mean(axis=0)
    return mixers
