import math

import numpy as np
import pytest

from app.analysis.fitting import fit_dense_to_structured
from app.analysis.heatmap import export_heatmap, read_heatmap_csv, read_pgm, to_pixels
from app.analysis.rank import attention_score_rank, offdiagonal_block_rank, rank_report
from app.analysis.similarity import (
    LN2,
    MixerSnapshot,
    SimilarityReport,
    entry_distribution,
    jsd,
    nuclear_norm,
    psnr,
    psnr_details,
    random_baseline,
    similarity_report,
)
from app.core.exceptions import DataFormatError, ShapeError, UndefinedMetricError
from app.engine.tensor import spectral_norm
from app.mixers.registry import materialize
from app.mixers.spec import (
    AttentionParams,
    MaskedLowRankParams,
    MixerFamily,
    MixerSpec,
    SemiseparableParams,
    ToeplitzParams,
)
from app.mixers.toeplitz import build_toeplitz_mixer


def snapshot(M: np.ndarray, block: str = "blocks.0") -> MixerSnapshot:
    return MixerSnapshot(model="test", block=block, head=0, epoch=0, matrix=M)


# Similarity ------------------------------------------------------------------

def test_psnr_hand_case():
    assert psnr(np.eye(2), np.eye(2) + 0.5) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_of_identical_matrices_is_infinite(rng):
    M = rng.uniform(size=(4, 4))
    assert psnr(M, M.copy()) == math.inf


def test_psnr_rescales_a_non_positive_original():
    M = -np.ones((2, 2)) - np.eye(2)
    value, rescaled = psnr_details(M, M + 0.1)
    assert rescaled and math.isfinite(value)
    assert psnr_details(M, M)[0] == math.inf


def test_psnr_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.eye(2), np.eye(3))


def test_jsd_bounds():
    M = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert jsd(M, M) == 0.0
    assert jsd(M, np.array([[0.0, 0.0], [0.0, 1.0]])) == pytest.approx(LN2)


def test_jsd_uses_absolute_values():
    M = np.array([[1.0, -2.0], [3.0, -4.0]])
    assert jsd(M, np.abs(M)) == pytest.approx(0.0, abs=1e-15)


def test_psnr_decreases_as_noise_grows(rng):
    M = rng.uniform(size=(6, 6))
    noise = rng.normal(size=(6, 6))
    values = [psnr(M, M + scale * noise) for scale in (1e-3, 1e-2, 0.1, 0.5, 2.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_jsd_is_symmetric(rng):
    for _ in range(20):
        A, B = rng.normal(size=(5, 5)), rng.uniform(size=(5, 5))
        assert jsd(A, B) == jsd(B, A)


def test_jsd_uniform_against_point_mass():
    point = np.zeros((2, 2))
    point[0, 0] = 1.0
    expected = 0.5 * (math.log(1.6) + 0.25 * math.log(0.4) + 0.75 * math.log(2.0))
    assert jsd(point, np.ones((2, 2))) == pytest.approx(expected, rel=1e-12)


def test_entry_distribution_of_zero_matrix_is_undefined():
    with pytest.raises(UndefinedMetricError):
        entry_distribution(np.zeros((3, 3)))
    with pytest.raises(UndefinedMetricError):
        jsd(np.eye(2), np.zeros((2, 2)))


def test_nuclear_norm(rng):
    assert nuclear_norm(np.eye(3)) == pytest.approx(3.0)
    assert nuclear_norm(np.diag([3.0, -4.0])) == pytest.approx(7.0)
    u, v = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    assert nuclear_norm(u @ v.T) == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v))


def test_nuclear_norm_dominates_the_spectral_norm(rng):
    for _ in range(10):
        M = rng.normal(size=(6, 6))
        assert nuclear_norm(M) >= spectral_norm(M)


def test_nuclear_norm_is_orthogonally_invariant(rng):
    M = rng.normal(size=(6, 6))
    U, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert nuclear_norm(U @ M) == pytest.approx(nuclear_norm(M), rel=1e-12)
    assert nuclear_norm(M @ U.T) == pytest.approx(nuclear_norm(M), rel=1e-12)


def test_similarity_report(rng):
    M = rng.uniform(size=(5, 5))
    report = similarity_report(M, M)
    assert report.psnr == math.inf and report.jsd == 0.0
    assert report.rank_orig == report.rank_dense == 5
    assert report.nuclear_norm_orig == pytest.approx(report.nuclear_norm_dense)
    with pytest.raises(ValueError):
        SimilarityReport(psnr=1.0, jsd=1.0, rank_orig=1, rank_dense=1, nuclear_norm_orig=1.0, nuclear_norm_dense=1.0)


def test_random_baseline_is_seeded():
    a = random_baseline((4, 6), np.random.default_rng(1))
    b = random_baseline((4, 6), np.random.default_rng(1))
    assert a.shape == (4, 6) and np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() < 1.0


def test_snapshot_validation():
    assert snapshot(np.eye(3)).tag == "test/blocks.0/h0/e0"
    with pytest.raises(ShapeError):
        snapshot(np.ones((2, 3)))
    with pytest.raises(ValueError):
        MixerSnapshot(model="", block="b", head=0, epoch=0, matrix=np.eye(2))


# Rank ------------------------------------------------------------------------

def test_offdiagonal_block_rank_hand_cases():
    assert offdiagonal_block_rank(np.eye(6)) == 0
    assert offdiagonal_block_rank(np.tril(np.ones((6, 6)))) == 1
    assert offdiagonal_block_rank(np.zeros((3, 3))) == 0


def test_attention_score_rank_needs_positive_entries():
    with pytest.raises(UndefinedMetricError):
        attention_score_rank(np.eye(3))
    assert attention_score_rank(np.full((4, 4), 0.25)) == 0


def test_saturated_softmax_rank_is_undefined(rng):
    L, D = 12, 4
    params = AttentionParams(rng.normal(size=(1, D, 2)) * 6.0, rng.normal(size=(1, D, 2)) * 6.0)
    spec = MixerSpec("attention", L, params)
    M = materialize(spec, rng.normal(size=(L, D)) * 6.0)
    assert np.any(M == 0.0)
    assert np.allclose(M.sum(axis=1), 1.0)
    with pytest.raises(UndefinedMetricError):
        rank_report(snapshot(M), spec)


def test_rank_report_for_identity_toeplitz():
    spec = MixerSpec("toeplitz", 5, ToeplitzParams(np.array([1.0, 0.0, 0.0])))
    report = rank_report(snapshot(build_toeplitz_mixer(spec.params, 5)), spec)
    assert report.passed and report.rank == 0 and report.full_rank == 5
    assert report.measure == "strictly-lower blocks"


def test_rank_report_flags_a_violation():
    spec = MixerSpec("masked-lowrank", 4, MaskedLowRankParams(np.ones((4, 1)), np.ones((1, 4))))
    report = rank_report(snapshot(np.eye(4)), spec)
    assert not report.passed and report.rank == 4 and report.bound == 1


def test_rank_bounds_hold_over_random_draws():
    rng = np.random.default_rng(2024)
    L, D, N, U = 12, 4, 2, 3
    for _ in range(100):
        X = rng.normal(size=(L, D))
        specs = [
            MixerSpec("attention", L, AttentionParams(rng.normal(size=(1, D, 2)) * 0.5,
                                                      rng.normal(size=(1, D, 2)) * 0.5)),
            MixerSpec("toeplitz", L, ToeplitzParams(rng.normal(size=3), dilation=2)),
            MixerSpec("semiseparable", L, SemiseparableParams(
                -np.exp(rng.normal(size=(D, N)) * 0.3), rng.normal(size=(D, N)), rng.normal(size=(D, N)),
                rng.normal(size=(D, D)), rng.normal(size=D))),
            MixerSpec("masked-lowrank", D, MaskedLowRankParams(rng.normal(size=(D, U)), rng.normal(size=(U, D)))),
        ]
        for spec in specs:
            row = 0 if spec.family is MixerFamily.MASKED_LOWRANK else None
            M = materialize(spec, X, head=0, row=row)
            report = rank_report(snapshot(M), spec)
            assert report.passed, f"{spec.family.value}: rank {report.rank} > {report.bound}"


# Fitting ---------------------------------------------------------------------

def test_fit_dense_to_toeplitz_target():
    target = build_toeplitz_mixer(ToeplitzParams(np.array([0.5, -1.0, 2.0])), 6)
    fitted, residual = fit_dense_to_structured(target)
    assert residual <= 1e-8
    assert np.allclose(fitted, target, atol=1e-8)


def test_fit_dense_to_semiseparable_target(rng):
    params = SemiseparableParams(np.full((1, 2), 0.8), rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    target = materialize(MixerSpec("semiseparable", 6, params), rng.normal(size=(6, 3)))
    assert fit_dense_to_structured(target)[1] <= 1e-8


def test_fit_with_zero_steps_keeps_the_start(rng):
    target = rng.normal(size=(3, 3))
    fitted, residual = fit_dense_to_structured(target, steps=0)
    assert np.array_equal(fitted, np.zeros((3, 3)))
    assert residual == pytest.approx(np.linalg.norm(target))


def _structured_target(family: str, n: int, rng) -> np.ndarray:
    D, P = 4, 2
    X = rng.normal(size=(n, D))
    if family in ("attention", "autocorrelation"):
        params = AttentionParams(rng.normal(size=(1, D, P)) * 0.5, rng.normal(size=(1, D, P)) * 0.5)
        return materialize(MixerSpec(family, n, params), X)
    if family == "toeplitz":
        return materialize(MixerSpec(family, n, ToeplitzParams(rng.normal(size=3), dilation=2)))
    if family == "semiseparable":
        params = SemiseparableParams(-np.exp(rng.normal(size=(D, 2)) * 0.3), rng.normal(size=(D, 2)),
                                     rng.normal(size=(D, 2)), rng.normal(size=(D, D)), rng.normal(size=D))
        return materialize(MixerSpec(family, n, params), X)
    params = MaskedLowRankParams(rng.normal(size=(n, 8)), rng.normal(size=(8, n)))
    return materialize(MixerSpec(family, n, params), rng.normal(size=(3, n)), row=1)


@pytest.mark.parametrize("n", [16, 64])
@pytest.mark.parametrize("family", ["attention", "autocorrelation", "toeplitz", "semiseparable", "masked-lowrank"])
def test_dense_fit_reproduces_every_family(family, n):
    target = _structured_target(family, n, np.random.default_rng(n))
    fitted, residual = fit_dense_to_structured(target)
    assert fitted.shape == (n, n)
    assert residual <= 1e-8


# Heatmaps --------------------------------------------------------------------

def test_constant_matrix_maps_to_white(tmp_path):
    assert to_pixels(np.array([[0.3]]))[0, 0] == 255
    pgm, _ = export_heatmap(np.array([[0.3]]), tmp_path / "single")
    assert read_pgm(pgm).tolist() == [[255]]


def test_identity_heatmap(tmp_path):
    pgm, csv = export_heatmap(np.eye(3), tmp_path / "maps" / "identity")
    assert pgm.name == "identity.pgm" and csv.name == "identity.csv"
    assert np.array_equal(read_pgm(pgm), 255 * np.eye(3, dtype=np.uint8))


def test_heatmap_csv_keeps_full_precision(tmp_path, rng):
    M = rng.normal(size=(4, 5))
    _, csv = export_heatmap(M, tmp_path / "raw")
    assert np.array_equal(read_heatmap_csv(csv), M)


def test_unreadable_heatmaps_raise(tmp_path):
    bogus = tmp_path / "bogus.pgm"
    bogus.write_bytes(b"P2\n1 1\n255\n\x00")
    with pytest.raises(DataFormatError):
        read_pgm(bogus)
    with pytest.raises(DataFormatError):
        read_heatmap_csv(tmp_path / "absent.csv")
