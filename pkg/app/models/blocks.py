"""One sequence-model layer: mixer and channel sub-layers with residuals and post-norm.

Sequence-axis blocks mix the n tokens with the studied mixer and then apply the
row-wise FFN. Feature-axis blocks (channels as tokens) keep token attention as
their first sub-layer and study the second one, the FFN read as a D x D mixer.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from ..core.exceptions import ShapeError, UnknownMixerError
from ..engine import autodiff as ad
from ..engine.autodiff import Node, Parameter, Tape
from ..engine.tensor import Shape
from ..mixers.attention import attention_scores
from ..mixers.autocorrelation import autocorr_mixers
from ..mixers.heads import broadcast_heads, merge_heads, split_heads
from ..mixers.semiseparable import materialize_semiseparable, selective_scan, ssm_operands
from ..mixers.spec import (
    AttentionParams,
    DenseParams,
    MaskedLowRankParams,
    MixerFamily,
    MixerSpec,
    SemiseparableParams,
    ToeplitzParams,
)
from ..mixers.toeplitz import toeplitz_mixers
from .layers import Normalization, ffn_node, normalize

logger = logging.getLogger(__name__)

Trace = Dict[str, np.ndarray]


@dataclass(frozen=True)
class BlockConfig:
    """Hyperparameters of one block.

    ``shape.L`` is the number of tokens the block sees (L, L_p, L' or C).
    """
    shape: Shape
    mixer: MixerFamily
    ffn_hidden: int
    normalization: Normalization = Normalization.LAYER
    residual: bool = True
    causal_dense: bool = False
    feature_axis: bool = False
    kernel_size: int = 3
    dilation: int = 1
    state_size: int = 4

    def __post_init__(self):
        object.__setattr__(self, "mixer", MixerFamily.parse(self.mixer))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if self.mixer is MixerFamily.MASKED_LOWRANK:
            object.__setattr__(self, "feature_axis", True)
        if self.ffn_hidden < 1:
            raise ShapeError(f"ffn hidden width must be >= 1, got {self.ffn_hidden}")
        if self.mixer is MixerFamily.TOEPLITZ:
            ToeplitzParams(np.zeros(self.kernel_size), self.dilation).check_length(self.shape.L)
        if self.mixer is MixerFamily.SEMISEPARABLE and self.shape.P != 1:
            raise ShapeError(f"semiseparable blocks run one head per channel, got P={self.shape.P}")

    @property
    def mixer_dim(self) -> int:
        return self.shape.D if self.feature_axis else self.shape.L

    @property
    def mixer_heads(self) -> int:
        return 1 if self.feature_axis else self.shape.H


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_mixer_params(cfg: BlockConfig, prefix: str, rng: np.random.Generator) -> Dict[str, Parameter]:
    s = cfg.shape
    D, H, P = s.D, s.H, s.P
    family = cfg.mixer
    values: Dict[str, np.ndarray] = {}
    if family in (MixerFamily.ATTENTION, MixerFamily.AUTOCORRELATION):
        values["mixer.W_Q"] = _uniform(rng, (H, D, P), D)
        values["mixer.W_K"] = _uniform(rng, (H, D, P), D)
    elif family is MixerFamily.TOEPLITZ:
        values["mixer.kernel"] = _uniform(rng, (H, cfg.kernel_size), cfg.kernel_size)
    elif family is MixerFamily.SEMISEPARABLE:
        N = cfg.state_size
        values["mixer.A_log"] = np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (D, 1)))
        values["mixer.W_B"] = _uniform(rng, (D, N), D)
        values["mixer.W_C"] = _uniform(rng, (D, N), D)
        values["mixer.W_delta"] = _uniform(rng, (D, D), D)
        # step sizes start log-uniform in [1e-3, 1e-1]
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=D))
        values["mixer.b_delta"] = dt + np.log(-np.expm1(-dt))
    elif family is MixerFamily.MASKED_LOWRANK:
        values["mixer.W_up"] = _uniform(rng, (D, cfg.ffn_hidden), D)
        values["mixer.W_down"] = _uniform(rng, (cfg.ffn_hidden, D), cfg.ffn_hidden)
    else:
        raise UnknownMixerError(f"dense mixers are created by convert_to_dense, not {family.value} init")
    return {f"{prefix}.{key}": Parameter(f"{prefix}.{key}", value) for key, value in values.items()}


def init_block_params(cfg: BlockConfig, prefix: str, rng: np.random.Generator) -> Dict[str, Parameter]:
    """Fresh parameters for one block, named ``{prefix}.<part>.<tensor>``"""
    s = cfg.shape
    params: Dict[str, Parameter] = {}

    def add(key: str, value: np.ndarray):
        params[f"{prefix}.{key}"] = Parameter(f"{prefix}.{key}", value)

    if cfg.feature_axis:
        add("attn.W_Q", _uniform(rng, (s.H, s.D, s.P), s.D))
        add("attn.W_K", _uniform(rng, (s.H, s.D, s.P), s.D))
    params.update(init_mixer_params(cfg, prefix, rng))
    if not cfg.feature_axis:
        add("ffn.W_up", _uniform(rng, (s.D, cfg.ffn_hidden), s.D))
        add("ffn.W_down", _uniform(rng, (cfg.ffn_hidden, s.D), cfg.ffn_hidden))
    if cfg.normalization is not Normalization.NONE:
        for norm in ("norm1", "norm2"):
            add(f"{norm}.gamma", np.ones(s.D))
            add(f"{norm}.beta", np.zeros(s.D))
    return params


def mixer_spec(cfg: BlockConfig, params: Mapping[str, Parameter], prefix: str) -> MixerSpec:
    """The block's mixer as a MixerSpec (Toeplitz uses head 0 of the kernel stack)"""
    def value(key):
        return params[f"{prefix}.{key}"].value

    family = cfg.mixer
    if family in (MixerFamily.ATTENTION, MixerFamily.AUTOCORRELATION):
        payload = AttentionParams(value("mixer.W_Q"), value("mixer.W_K"))
    elif family is MixerFamily.TOEPLITZ:
        payload = ToeplitzParams(value("mixer.kernel")[0], cfg.dilation)
    elif family is MixerFamily.SEMISEPARABLE:
        payload = SemiseparableParams(-np.exp(value("mixer.A_log")), value("mixer.W_B"), value("mixer.W_C"),
                                      value("mixer.W_delta"), value("mixer.b_delta"))
    elif family is MixerFamily.MASKED_LOWRANK:
        payload = MaskedLowRankParams(value("mixer.W_up"), value("mixer.W_down"))
    else:
        payload = DenseParams(value("dense"), causal=cfg.causal_dense and not cfg.feature_axis)
    return MixerSpec(family, cfg.mixer_dim, payload)


def _record(trace: Optional[Trace], prefix: str, mixers: np.ndarray):
    if trace is not None:
        trace[prefix] = np.array(mixers, dtype=np.float64)


def _heads_product(M: Node, V: Node, heads: int) -> Node:
    return merge_heads(M @ split_heads(V, heads))


def _sequence_mixer(cfg: BlockConfig, params: Mapping[str, Parameter], prefix: str,
                    V: Node, trace: Optional[Trace]) -> Node:
    tape = V.tape

    def p(key):
        return tape.param(params[f"{prefix}.{key}"])

    family = cfg.mixer
    n = V.shape[-2]
    if n != cfg.shape.L:
        raise ShapeError(f"block {prefix} expects {cfg.shape.L} tokens", V.shape)

    if family is MixerFamily.SEMISEPARABLE:
        A = -ad.exp(p("mixer.A_log"))
        B = V @ p("mixer.W_B")
        C = V @ p("mixer.W_C")
        delta = ad.softplus(V @ p("mixer.W_delta") + p("mixer.b_delta"))
        if trace is not None:
            A_bar, B_bar, C_ = ssm_operands(mixer_spec(cfg, params, prefix).params, V.value)
            _record(trace, prefix, materialize_semiseparable(A_bar, B_bar, C_))
        return selective_scan(V, delta, A, B, C)

    if family is MixerFamily.ATTENTION:
        M = attention_scores(V, p("mixer.W_Q"), p("mixer.W_K"))
    elif family is MixerFamily.AUTOCORRELATION:
        X = broadcast_heads(V)
        M = autocorr_mixers(X @ p("mixer.W_Q"), X @ p("mixer.W_K"))
    elif family is MixerFamily.TOEPLITZ:
        M = toeplitz_mixers(p("mixer.kernel"), n, cfg.dilation)
    elif family is MixerFamily.DENSE:
        M = p("dense")
        if cfg.causal_dense:
            M = M * np.tril(np.ones((n, n)))
    else:
        raise UnknownMixerError(f"{family.value} does not mix the sequence axis")
    _record(trace, prefix, M.value)
    return _heads_product(M, V, cfg.shape.H)


def _feature_mixer(cfg: BlockConfig, params: Mapping[str, Parameter], prefix: str,
                   Z: Node, trace: Optional[Trace]) -> Node:
    tape = Z.tape

    def p(key):
        return tape.param(params[f"{prefix}.{key}"])

    if cfg.mixer is MixerFamily.MASKED_LOWRANK:
        W_up, W_down = p("mixer.W_up"), p("mixer.W_down")
        if trace is not None:
            mask = (Z.value @ W_up.value > 0).astype(np.float64)
            per_row = np.einsum("ud,...nu,eu->...nde", W_down.value, mask, W_up.value)
            _record(trace, prefix, per_row[..., None, :, :])
        return ffn_node(Z, W_up, W_down)
    if cfg.mixer is MixerFamily.DENSE:
        M = p("dense")
        _record(trace, prefix, M.value)
        # row y -> M y^T
        return Z @ ad.swap_last(M)
    raise UnknownMixerError(f"{cfg.mixer.value} does not mix the feature axis")


def _norm(cfg: BlockConfig, params: Mapping[str, Parameter], prefix: str, name: str, x: Node) -> Node:
    if cfg.normalization is Normalization.NONE:
        return x
    tape = x.tape
    gamma = tape.param(params[f"{prefix}.{name}.gamma"])
    beta = tape.param(params[f"{prefix}.{name}.beta"])
    return normalize(cfg.normalization, x, gamma, beta)


def _residual(cfg: BlockConfig, x: Node, update: Node) -> Node:
    return x + update if cfg.residual else update


def forward_block(cfg: BlockConfig, params: Mapping[str, Parameter], prefix: str,
                  V: Node, trace: Optional[Trace] = None) -> Node:
    """norm1(V + mixer(V)) followed by norm2(Z + FFN(Z)); output shape equals input shape.

    With ``trace`` given, the mixer matrices this pass used are stored under
    ``prefix`` as (..., H, n, n) arrays.
    """
    if V.shape[-1] != cfg.shape.D:
        raise ShapeError(f"block {prefix} expects width {cfg.shape.D}", V.shape)
    tape = V.tape

    def p(key):
        return tape.param(params[f"{prefix}.{key}"])

    if cfg.feature_axis:
        M = attention_scores(V, p("attn.W_Q"), p("attn.W_K"))
        Z = _norm(cfg, params, prefix, "norm1", _residual(cfg, V, _heads_product(M, V, cfg.shape.H)))
        update = _feature_mixer(cfg, params, prefix, Z, trace)
    else:
        Z = _norm(cfg, params, prefix, "norm1", _residual(cfg, V, _sequence_mixer(cfg, params, prefix, V, trace)))
        update = ffn_node(Z, p("ffn.W_up"), p("ffn.W_down"))
    return _norm(cfg, params, prefix, "norm2", _residual(cfg, Z, update))


def bidirectional_compose(cfg: BlockConfig, params: Mapping[str, Parameter], prefix: str,
                          X: Node, trace: Optional[Trace] = None) -> Node:
    """forward(X) + reverse(forward'(reverse(X))) with separate ``.fwd``/``.rev`` parameters"""
    forward = forward_block(cfg, params, f"{prefix}.fwd", X, trace)
    backward = forward_block(cfg, params, f"{prefix}.rev", ad.reverse_rows(X), trace)
    return forward + ad.reverse_rows(backward)


def run_block(cfg: BlockConfig, params: Mapping[str, Parameter], prefix: str, V: np.ndarray,
              bidirectional: bool = False) -> np.ndarray:
    """Evaluate one block on an array, (n, D) or batched (..., n, D)"""
    tape = Tape()
    node = tape.constant(V)
    if bidirectional:
        return bidirectional_compose(cfg, params, prefix, node).value
    return forward_block(cfg, params, prefix, node).value
