import math

import numpy as np
import pytest

from app.analysis.rank import attention_score_rank, offdiagonal_block_rank
from app.core.exceptions import ShapeError, UnknownMixerError
from app.engine.tensor import direct_autocorrelation, numerical_rank
from app.mixers.attention import attention_apply, build_attention_mixer
from app.mixers.autocorrelation import autocorr_apply, build_autocorr_mixer
from app.mixers.dense import InitPolicy, apply_mixer, make_dense_mixer
from app.mixers.lowrank import build_masked_lowrank_mixer, masked_lowrank_apply
from app.mixers.registry import materialize
from app.mixers.semiseparable import (
    build_semiseparable_mixer,
    discretize_ssm,
    scan_semiseparable,
    semiseparable_apply_materialized,
)
from app.mixers.spec import (
    AttentionParams,
    DenseParams,
    MaskedLowRankParams,
    MixerFamily,
    MixerSpec,
    SemiseparableParams,
    ToeplitzParams,
)
from app.mixers.toeplitz import build_toeplitz_mixer, conv_apply

LENGTHS = [1, 2, 8, 32, 64]


def random_attention(rng, D=4, H=2, P=2):
    return AttentionParams(rng.normal(size=(H, D, P)), rng.normal(size=(H, D, P)))


def mamba_params(rng, C=3, D=3, N=4):
    return SemiseparableParams(
        A=-np.exp(rng.normal(size=(D, N)) * 0.3),
        W_B=rng.normal(size=(C, N)),
        W_C=rng.normal(size=(C, N)),
        W_delta=rng.normal(size=(C, D)) * 0.3,
        b_delta=rng.normal(size=D) * 0.1,
    )


# Attention -------------------------------------------------------------------

def test_attention_with_zero_projections_is_uniform():
    params = AttentionParams(np.zeros((1, 3, 2)), np.zeros((1, 3, 2)))
    M = build_attention_mixer(np.ones((5, 3)), params, 0)
    assert np.allclose(M, 0.2)


def test_attention_single_token():
    rng = np.random.default_rng(1)
    M = build_attention_mixer(rng.normal(size=(1, 4)), random_attention(rng), 1)
    assert np.array_equal(M, [[1.0]])


def test_attention_rows_are_distributions_with_low_score_rank():
    rng = np.random.default_rng(2)
    M = build_attention_mixer(rng.normal(size=(4, 4)), random_attention(rng, P=2), 0)
    assert np.allclose(M.sum(axis=1), 1.0)
    assert attention_score_rank(M) <= 2


@pytest.mark.parametrize("L", LENGTHS)
def test_streaming_attention_matches_materialized(L):
    rng = np.random.default_rng(100 + L)
    for _ in range(20):
        params = random_attention(rng)
        X, V = rng.normal(size=(L, 4)), rng.normal(size=(L, 3))
        expected = build_attention_mixer(X, params, 1) @ V
        assert np.max(np.abs(attention_apply(X, params, 1, V, block=5) - expected)) <= 1e-9


def test_attention_rejects_bad_head():
    rng = np.random.default_rng(3)
    with pytest.raises(IndexError):
        build_attention_mixer(rng.normal(size=(4, 4)), random_attention(rng), 5)


# Toeplitz --------------------------------------------------------------------

def test_toeplitz_hand_cases():
    assert np.array_equal(build_toeplitz_mixer(ToeplitzParams(np.array([1.0])), 4), np.eye(4))
    M = build_toeplitz_mixer(ToeplitzParams(np.array([1.0, 1.0])), 3)
    assert np.array_equal(M, [[1, 0, 0], [1, 1, 0], [0, 1, 1]])


def test_dilated_toeplitz_band():
    a, b = 2.0, 5.0
    M = build_toeplitz_mixer(ToeplitzParams(np.array([a, b]), dilation=2), 5)
    offsets = np.subtract.outer(np.arange(5), np.arange(5))
    assert np.all(M[offsets == 0] == a)
    assert np.all(M[offsets == 2] == b)
    assert np.all(M[(offsets != 0) & (offsets != 2)] == 0.0)


def test_toeplitz_band_must_fit():
    with pytest.raises(ShapeError):
        build_toeplitz_mixer(ToeplitzParams(np.ones(3), dilation=2), 4)


def test_conv_apply_identity_and_shift(rng):
    U = rng.normal(size=(6, 2))
    assert np.array_equal(conv_apply(ToeplitzParams(np.array([1.0])), U), U)
    shifted = conv_apply(ToeplitzParams(np.array([0.0, 1.0])), U)
    assert np.array_equal(shifted[0], [0.0, 0.0])
    assert np.array_equal(shifted[1:], U[:-1])


@pytest.mark.parametrize("L", LENGTHS)
def test_conv_apply_matches_materialized(L):
    rng = np.random.default_rng(200 + L)
    for _ in range(20):
        K = int(rng.integers(1, min(L, 4) + 1))
        dilation = 1 if K == 1 else int(rng.integers(1, max(1, (L - 1) // (K - 1)) + 1))
        params = ToeplitzParams(rng.normal(size=K), dilation)
        U = rng.normal(size=(L, 3))
        assert np.max(np.abs(conv_apply(params, U) - build_toeplitz_mixer(params, L) @ U)) <= 1e-9


# Autocorrelation -------------------------------------------------------------

def test_autocorrelation_single_lag():
    Q, K = np.array([[2.0, 1.0]]), np.array([[3.0, 4.0]])
    assert np.allclose(build_autocorr_mixer(Q, K), [[5.0]])


def test_autocorrelation_of_delta_is_diagonal():
    delta = np.zeros((6, 1))
    delta[0, 0] = 1.0
    M = build_autocorr_mixer(delta, delta)
    assert np.allclose(M, np.eye(6), atol=1e-12)


def test_autocorrelation_matches_direct_construction(rng):
    Q, K = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    lags = np.mean([direct_autocorrelation(Q[:, p], K[:, p]) for p in range(3)], axis=0)
    expected = lags[np.abs(np.subtract.outer(np.arange(8), np.arange(8)))]
    assert np.max(np.abs(build_autocorr_mixer(Q, K) - expected)) <= 1e-9


@pytest.mark.parametrize("L", LENGTHS)
def test_fft_autocorr_apply_matches_materialized(L):
    rng = np.random.default_rng(300 + L)
    for _ in range(20):
        Q, K, V = rng.normal(size=(L, 2)), rng.normal(size=(L, 2)), rng.normal(size=(L, 3))
        assert np.max(np.abs(autocorr_apply(Q, K, V) - build_autocorr_mixer(Q, K) @ V)) <= 1e-9


# Semiseparable ---------------------------------------------------------------

def test_discretization_limit_and_closed_form():
    A_bar, B_bar = discretize_ssm(np.zeros((1, 1)), np.array([[0.5]]), np.array([[2.0]]))
    assert A_bar[0, 0, 0] == 1.0
    assert B_bar[0, 0, 0] == pytest.approx(1.0)
    A_bar, B_bar = discretize_ssm(-np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
    assert A_bar[0, 0, 0] == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert B_bar[0, 0, 0] == pytest.approx(1.0 - math.exp(-1.0), abs=1e-15)


def test_discretization_matches_series_expansion(rng):
    A = -rng.uniform(0.0, 1.0, size=(2, 3))
    Delta = rng.uniform(1e-4, 0.5, size=(4, 2))
    B = rng.normal(size=(4, 3))
    _, B_bar = discretize_ssm(A, Delta, B)
    x = Delta[:, :, None] * A
    ratio = sum(x ** k / math.factorial(k + 1) for k in range(20))
    assert np.max(np.abs(B_bar - ratio * Delta[:, :, None] * B[:, None, :])) <= 1e-10


def test_unit_transitions_fill_the_lower_triangle():
    params = SemiseparableParams(A=np.ones((1, 1)), W_B=np.ones((1, 1)), W_C=np.ones((1, 1)))
    M = build_semiseparable_mixer(params, np.ones((5, 1)), 0)
    assert np.array_equal(M, np.tril(np.ones((5, 5))))


def test_zero_transitions_leave_only_the_diagonal(rng):
    X = rng.normal(size=(5, 1))
    params = SemiseparableParams(A=np.zeros((1, 1)), W_B=np.array([[2.0]]), W_C=np.array([[3.0]]))
    M = build_semiseparable_mixer(params, X, 0)
    assert np.allclose(M, np.diag(6.0 * X[:, 0] ** 2))


def test_semiseparable_strictly_lower_blocks_have_rank_at_most_n():
    rng = np.random.default_rng(4)
    params = mamba_params(rng, C=3, D=3, N=2)
    M = build_semiseparable_mixer(params, rng.normal(size=(16, 3)), 1)
    assert np.all(np.triu(M, 1) == 0.0)
    assert offdiagonal_block_rank(M) <= 2


def test_scan_of_zero_input_is_zero(rng):
    params = mamba_params(rng)
    assert np.array_equal(scan_semiseparable(params, rng.normal(size=(6, 3)), np.zeros((6, 3))), np.zeros((6, 3)))


def test_single_step_scan(rng):
    params = mamba_params(rng)
    X, U = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    Y = scan_semiseparable(params, X, U)
    for d in range(3):
        assert Y[0, d] == pytest.approx(build_semiseparable_mixer(params, X, d)[0, 0] * U[0, d], abs=1e-12)


@pytest.mark.parametrize("L", LENGTHS)
def test_scan_matches_materialized(L):
    rng = np.random.default_rng(400 + L)
    for i in range(20):
        if i % 2:
            params = mamba_params(rng, N=4)
        else:
            params = SemiseparableParams(A=rng.uniform(-1, 1, size=(L, 3, 4)), W_B=rng.normal(size=(3, 4)),
                                         W_C=rng.normal(size=(3, 4)))
        X, U = rng.normal(size=(L, 3)), rng.normal(size=(L, 3))
        diff = scan_semiseparable(params, X, U) - semiseparable_apply_materialized(params, X, U)
        assert np.max(np.abs(diff)) <= 1e-9


# Masked low-rank -------------------------------------------------------------

def test_masked_lowrank_fully_masked_is_zero():
    params = MaskedLowRankParams(-np.ones((3, 2)), np.ones((2, 3)))
    assert np.array_equal(build_masked_lowrank_mixer(params, np.ones((1, 3))), np.zeros((3, 3)))


def test_masked_lowrank_unmasked_is_the_projection_product(rng):
    W_up, W_down = np.abs(rng.normal(size=(4, 2))), rng.normal(size=(2, 4))
    M = build_masked_lowrank_mixer(MaskedLowRankParams(W_up, W_down), np.ones((1, 4)))
    assert np.allclose(M, W_down.T @ W_up.T)


def test_masked_lowrank_matches_ffn_per_row(rng):
    params = MaskedLowRankParams(rng.normal(size=(6, 3)), rng.normal(size=(3, 6)))
    Y = rng.normal(size=(5, 6))
    direct = masked_lowrank_apply(params, Y)
    for row in range(5):
        M = build_masked_lowrank_mixer(params, Y, row)
        assert np.max(np.abs(M @ Y[row] - direct[row])) <= 1e-12
        assert numerical_rank(M) <= 3


def test_masked_lowrank_needs_a_row_for_several_rows(rng):
    params = MaskedLowRankParams(rng.normal(size=(3, 2)), rng.normal(size=(2, 3)))
    with pytest.raises(ShapeError):
        build_masked_lowrank_mixer(params, rng.normal(size=(2, 3)))


# Dense -----------------------------------------------------------------------

def test_apply_mixer(rng):
    V = rng.normal(size=(8, 3))
    assert np.array_equal(apply_mixer(np.eye(8), V), V)
    assert np.array_equal(apply_mixer(np.zeros((8, 8)), V), np.zeros((8, 3)))
    M = rng.normal(size=(8, 8))
    assert np.allclose(apply_mixer(M, V), M @ V)
    with pytest.raises(ShapeError):
        apply_mixer(M, rng.normal(size=(7, 3)))


def test_dense_initializations(rng):
    assert np.array_equal(make_dense_mixer(5, InitPolicy.zero()).value, np.zeros((5, 5)))
    scaled = make_dense_mixer(100, InitPolicy.scaled(), rng).value
    assert scaled.size == 10_000
    assert np.all(np.abs(scaled) <= 0.1)
    source = rng.normal(size=(2, 4, 4))
    distilled = make_dense_mixer(4, InitPolicy.distill(source), heads=2).value
    assert np.array_equal(distilled, source)
    with pytest.raises(ShapeError):
        make_dense_mixer(3, InitPolicy.distill(source), heads=2)
    with pytest.raises(ValueError):
        make_dense_mixer(3, InitPolicy.distill())


def test_distill_source_must_be_finite():
    source = np.eye(4)
    source[2, 1] = np.nan
    with pytest.raises(FloatingPointError, match="distill source"):
        make_dense_mixer(4, InitPolicy.distill(source))


# Specs and dispatch ----------------------------------------------------------

def test_family_parsing():
    assert MixerFamily.parse(" Masked-LowRank ") is MixerFamily.MASKED_LOWRANK
    assert not MixerFamily.DENSE.structured
    assert MixerFamily.TOEPLITZ.causal and MixerFamily.SEMISEPARABLE.causal
    assert not MixerFamily.ATTENTION.causal and not MixerFamily.DENSE.causal
    with pytest.raises(UnknownMixerError):
        MixerFamily.parse("hyena")


def test_spec_checks_payload_and_length():
    with pytest.raises(UnknownMixerError):
        MixerSpec(MixerFamily.TOEPLITZ, 4, DenseParams(np.zeros((1, 4, 4))))
    with pytest.raises(ShapeError):
        MixerSpec(MixerFamily.TOEPLITZ, 2, ToeplitzParams(np.ones(3)))


def test_materialize_dispatch(rng):
    X = rng.normal(size=(6, 4))
    attention = random_attention(rng)
    assert np.array_equal(materialize(MixerSpec("attention", 6, attention), X, head=1),
                          build_attention_mixer(X, attention, 1))
    dense = rng.normal(size=(1, 6, 6))
    assert np.array_equal(materialize(MixerSpec("dense", 6, DenseParams(dense, causal=True))), np.tril(dense[0]))
    with pytest.raises(ValueError):
        materialize(MixerSpec("attention", 6, attention))
