"""The Orig-vs-JD pipeline and the single-arm, analyze and export helpers behind the CLI"""
import logging
import uuid
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..analysis.heatmap import export_heatmap, read_heatmap_csv
from ..analysis.rank import rank_report
from ..analysis.similarity import MixerSnapshot, jsd, random_baseline, similarity_report
from ..backend.models import ArmReport, ExperimentConfig, ExperimentReport, RankEntry, SimilarityEntry
from ..core.config import settings
from ..core.database import SessionLocal, record_run
from ..core.exceptions import ExportError, UndefinedMetricError
from ..mixers.dense import InitPolicy
from ..models.blocks import mixer_spec
from ..models.checkpoint import load_checkpoint, load_into, save_checkpoint
from ..models.convert import convert_to_dense
from ..models.sequence import SequenceModel, Task, build_model, materialize_mixers, parameter_census
from .data import WindowedDataset, gen_classification_toy, gen_synthetic_ar, load_csv, make_imputation_dataset
from .training import TrainResult, evaluate, train

logger = logging.getLogger(__name__)

# One master seed; every stream is derived by a fixed offset
SEED_OFFSETS = {"data": 0, "init": 1, "batches": 2, "dense": 3, "baseline": 4, "mask": 5}


def seeded(config: ExperimentConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng(config.seed + SEED_OFFSETS[stream])


def build_dataset(config: ExperimentConfig) -> Tuple[WindowedDataset, ExperimentConfig]:
    """Dataset for ``config``; the config is returned with ``channels`` matched to CSV input"""
    seed = config.seed + SEED_OFFSETS["data"]
    if config.task is Task.CLASSIFICATION:
        dataset = gen_classification_toy(config.lookback, config.channels, config.n_classes, seed,
                                         n_windows=config.n_windows, noise_std=config.noise_std,
                                         splits=config.splits)
        return dataset, config
    if config.data == "csv":
        dataset = load_csv(config.data_path, config.lookback, config.horizon, config.splits)
        if dataset.channels != config.channels:
            logger.info(f"Using {dataset.channels} channels from {config.data_path}")
            config = config.model_copy(update={"channels": dataset.channels})
    else:
        dataset = gen_synthetic_ar(config.lookback, config.channels, config.horizon, config.ar_coeffs,
                                   config.noise_std, config.n_windows, seed, config.splits, config.anomaly_rate)
    if config.task is Task.IMPUTATION:
        dataset = make_imputation_dataset(dataset, config.mask_ratio, config.seed + SEED_OFFSETS["mask"])
    return dataset, config


def calibration_batch(config: ExperimentConfig, dataset: WindowedDataset) -> np.ndarray:
    return dataset.subset("train").X[:config.calibration_size]


def _arm_report(name: str, model: SequenceModel, result: TrainResult, metrics, config: ExperimentConfig) -> ArmReport:
    return ArmReport(name=name, metrics=metrics, loss_curve=result.losses, parameters=parameter_census(model),
                     wall_clock=result.wall_clock, steps=config.steps, batch_size=config.batch_size, lr=config.lr)


def _snapshot_name(prefix: str, head: int, arm: str) -> str:
    return f"{prefix.replace('.', '_')}_h{head}_{arm}"


def compare_mixers(config: ExperimentConfig, orig: SequenceModel, dense: SequenceModel, calibration: np.ndarray,
                   out_dir: Optional[Path]) -> Tuple[List[SimilarityEntry], List[RankEntry], List[str]]:
    """Similarity of every head's mixers plus rank diagnostics for both arms"""
    orig_mixers = materialize_mixers(orig, calibration)
    dense_mixers = materialize_mixers(dense, calibration)
    # input-dependent bounds hold per input, so ranks use a single window
    single = materialize_mixers(orig, calibration[:1])
    baseline_rng = seeded(config, "baseline")
    similarity, ranks, artifacts = [], [], []
    for (prefix, block), (_, dense_block) in zip(orig.mixer_prefixes(), dense.mixer_prefixes()):
        spec = mixer_spec(block, orig.params, prefix)
        dense_spec = mixer_spec(dense_block, dense.params, prefix)
        for head in range(block.mixer_heads):
            M, M_dense = orig_mixers[prefix][head], dense_mixers[prefix][head]
            try:
                sim = similarity_report(M, M_dense)
                similarity.append(SimilarityEntry(
                    block=prefix, head=head, psnr=sim.psnr, jsd=sim.jsd,
                    jsd_random=jsd(M, random_baseline(M.shape, baseline_rng)),
                    rank_orig=sim.rank_orig, rank_dense=sim.rank_dense,
                    nuclear_norm_orig=sim.nuclear_norm_orig, nuclear_norm_dense=sim.nuclear_norm_dense,
                    psnr_rescaled=sim.psnr_rescaled,
                ))
            except UndefinedMetricError as e:
                logger.warning(f"Similarity undefined for {prefix} head {head}: {e}")
            for arm, matrix, arm_spec in (("orig", single[prefix][head], spec), ("jd", M_dense, dense_spec)):
                try:
                    diag = rank_report(MixerSnapshot(arm, prefix, head, config.steps, matrix), arm_spec)
                except UndefinedMetricError as e:
                    logger.warning(f"Rank undefined for {arm} {prefix} head {head}: {e}")
                    continue
                ranks.append(RankEntry(arm=arm, block=prefix, head=head, family=diag.family, measure=diag.measure,
                                       rank=diag.rank, bound=diag.bound, full_rank=diag.full_rank,
                                       passed=diag.passed))
            if out_dir is not None:
                for arm, matrix in (("orig", M), ("jd", M_dense)):
                    pgm, csv = export_heatmap(matrix, out_dir / "snapshots" / _snapshot_name(prefix, head, arm))
                    artifacts.extend([str(pgm), str(csv)])
    return similarity, ranks, artifacts


def _persist(report: ExperimentReport, status: str):
    try:
        with SessionLocal() as db:
            record_run(db, report.run_id, template=report.config.template, mixer=report.config.mixer,
                       task=report.config.task.value, seed=report.seed, status=status,
                       orig_metric=report.headline("orig"), jd_metric=report.headline("jd"),
                       report=report.model_dump_json(), error=report.error, created_at=report.created_at)
    except Exception as e:
        logger.error(f"Could not record run {report.run_id}: {e}")


def write_report(report: ExperimentReport, out_dir: Path) -> Path:
    path = out_dir / "report.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        raise ExportError(f"cannot write report: {e}", path) from e
    return path


def run_experiment(config: ExperimentConfig, echo: Optional[Dict[str, str]] = None,
                   out_dir: Union[str, Path, None] = None, run_id: Optional[str] = None,
                   register: bool = True) -> ExperimentReport:
    """Train the original arm and its JustDense conversion under one budget and compare them.

    Failures still produce a report marked incomplete (written and registered)
    before the error propagates.
    """
    run_id = run_id or uuid.uuid4().hex[:12]
    out = Path(out_dir or settings.OUTPUT_DIR) / run_id
    report = ExperimentReport(run_id=run_id, created_at=datetime.utcnow(), seed=config.seed, config=config,
                              config_echo=echo or {})
    report.notes = [
        "metrics are unweighted means over windows and channels",
        "jsd compares normalized absolute entries",
        "rank diagnostics of input-dependent mixers use the first calibration window",
        "jd arm fine-tuned from the trained original" if config.finetune
        else "jd arm trained from scratch with the original's non-mixer initialization",
    ]
    if register:
        _persist(report, "running")
    logger.info(f"Experiment {run_id}: {config.template} / {config.task.value}, seed {config.seed}")
    try:
        dataset, config = build_dataset(config)
        calibration = calibration_batch(config, dataset)
        orig = build_model(config.template_config(), seeded(config, "init"))
        policy = InitPolicy(config.dense_init)
        train_config = config.train_config(config.seed + SEED_OFFSETS["batches"])

        dense = None if config.finetune else convert_to_dense(orig, policy, calibration, seeded(config, "dense"))
        orig_result = train(orig, dataset, train_config)
        if dense is None:
            dense = convert_to_dense(orig, policy, calibration, seeded(config, "dense"))
        dense_result = train(dense, dataset, train_config)

        report.arms = {
            "orig": _arm_report("orig", orig, orig_result, evaluate(orig, dataset, "test", config.mase_scaling), config),
            "jd": _arm_report("jd", dense, dense_result, evaluate(dense, dataset, "test", config.mase_scaling), config),
        }
        report.similarity, report.ranks, report.artifacts = compare_mixers(config, orig, dense, calibration, out)
        report.complete = True
        path = write_report(report, out)
        logger.info(f"Experiment {run_id} complete: orig {report.headline('orig')}, "
                    f"jd {report.headline('jd')}; report at {path}")
    except Exception as e:
        report.error = f"{type(e).__name__}: {e}"
        logger.error(f"Experiment {run_id} failed: {report.error}")
        try:
            write_report(report, out)
        except ExportError as write_error:
            logger.error(str(write_error))
        if register:
            _persist(report, "failed")
        raise
    if register:
        _persist(report, "complete")
    return report


def build_arm(config: ExperimentConfig, arm: str, dataset: WindowedDataset) -> SequenceModel:
    model = build_model(config.template_config(), seeded(config, "init"))
    if arm == "jd":
        model = convert_to_dense(model, InitPolicy(config.dense_init), calibration_batch(config, dataset),
                                 seeded(config, "dense"))
    elif arm != "orig":
        raise ValueError(f"arm must be 'orig' or 'jd', got {arm!r}")
    return model


def run_single_arm(config: ExperimentConfig, arm: str, out_dir: Union[str, Path]) -> Tuple[ArmReport, Path]:
    """Train one arm, save its checkpoint and return its metrics"""
    dataset, config = build_dataset(config)
    model = build_arm(config, arm, dataset)
    result = train(model, dataset, config.train_config(config.seed + SEED_OFFSETS["batches"]))
    report = _arm_report(arm, model, result, evaluate(model, dataset, "test", config.mase_scaling), config)
    checkpoint = save_checkpoint(model.params, Path(out_dir) / f"{arm}.jdck")
    return report, checkpoint


def export_mixers(config: ExperimentConfig, checkpoint: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
    """Heatmaps of every head's mixer of a checkpointed arm on the calibration batch"""
    dataset, config = build_dataset(config)
    arm = "jd" if any(name.endswith(".dense") for name in load_checkpoint(checkpoint)) else "orig"
    model = load_into(build_arm(config, arm, dataset), checkpoint)
    written = []
    for prefix, mixers in materialize_mixers(model, calibration_batch(config, dataset)).items():
        for head, matrix in enumerate(mixers):
            written.extend(export_heatmap(matrix, Path(out_dir) / _snapshot_name(prefix, head, arm)))
    logger.info(f"Exported {len(written) // 2} heatmaps to {out_dir}")
    return written


def analyze_snapshots(directory: Union[str, Path], seed: int = 0) -> List[Dict[str, object]]:
    """Similarity and rank of every ``*_orig.csv`` / ``*_jd.csv`` pair, plus the random-matrix JSD"""
    directory = Path(directory)
    rng = np.random.default_rng(seed + SEED_OFFSETS["baseline"])
    rows = []
    for orig_path in sorted(directory.glob("*_orig.csv")):
        stem = orig_path.name[:-len("_orig.csv")]
        dense_path = directory / f"{stem}_jd.csv"
        if not dense_path.exists():
            logger.warning(f"No dense snapshot for {orig_path.name}")
            continue
        M, M_dense = read_heatmap_csv(orig_path), read_heatmap_csv(dense_path)
        sim = similarity_report(M, M_dense)
        rows.append({
            "snapshot": stem,
            "psnr": sim.psnr,
            "jsd": sim.jsd,
            "jsd_random": jsd(M, random_baseline(M.shape, rng)),
            "rank_orig": sim.rank_orig,
            "rank_dense": sim.rank_dense,
            "nuclear_norm_orig": sim.nuclear_norm_orig,
            "nuclear_norm_dense": sim.nuclear_norm_dense,
        })
    return rows
