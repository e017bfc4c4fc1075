import math
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_serializer, field_validator, model_validator

from ..core.config import read_key_value_file
from ..core.exceptions import DataFormatError
from ..harness.metrics import MaseScaling
from ..harness.training import TrainConfig
from ..mixers.dense import InitKind
from ..models.sequence import TEMPLATES, Task, TemplateConfig

SCHEMA_VERSION = "1.0"


def _float_or_inf(value):
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return value


class ExperimentConfig(BaseModel):
    """One Orig-vs-JD comparison; both arms share every budget field"""
    task: Task = Task.FORECAST
    template: str = "attention"
    mixer: Optional[str] = None

    data: str = "synthetic"
    data_path: Optional[str] = None
    lookback: int = Field(32, ge=1)
    horizon: int = Field(8, ge=1)
    channels: int = Field(2, ge=1)
    n_windows: int = Field(2000, ge=1)
    ar_coeffs: List[float] = [0.6, -0.3]
    noise_std: float = Field(0.1, ge=0)
    n_classes: int = Field(2, ge=2)
    mask_ratio: float = Field(0.25, gt=0, lt=1)
    anomaly_rate: float = Field(0.0, ge=0, lt=1)
    splits: List[float] = [0.7, 0.1, 0.2]

    width: int = Field(8, ge=1)
    heads: int = Field(2, ge=1)
    n_blocks: int = Field(1, ge=0)
    ffn_hidden: int = Field(16, ge=1)
    patch_len: int = Field(4, ge=1)
    kernel_size: int = Field(3, ge=1)
    dilation: int = Field(1, ge=1)
    state_size: int = Field(4, ge=1)
    downsample: str = ""
    normalization: Optional[str] = None

    seed: int = Field(0, ge=0)
    lr: float = Field(1e-3, ge=0)
    steps: int = Field(300, ge=0)
    batch_size: int = Field(32, ge=1)
    clip_norm: float = Field(1.0, gt=0)
    schedule: str = "constant"

    dense_init: InitKind = InitKind.DISTILL
    dense_lr_scale: float = Field(0.01, gt=0)
    causal_dense: bool = False
    finetune: bool = False
    calibration_size: int = Field(32, ge=1)
    mase_scaling: MaseScaling = MaseScaling.WINDOW

    @field_validator("ar_coeffs", "splits", mode="before")
    @classmethod
    def parse_number_list(cls, value):
        if isinstance(value, str):
            return [float(item) for item in value.replace(";", ",").split(",") if item.strip()]
        return value

    @field_validator("template")
    @classmethod
    def known_template(cls, value: str) -> str:
        if value not in TEMPLATES:
            raise ValueError(f"unknown template {value!r}; choose from {', '.join(TEMPLATES)}")
        return value

    @field_validator("data")
    @classmethod
    def known_source(cls, value: str) -> str:
        if value not in ("synthetic", "csv"):
            raise ValueError("data must be 'synthetic' or 'csv'")
        return value

    @model_validator(mode="after")
    def csv_needs_path(self):
        if self.data == "csv" and not self.data_path:
            raise ValueError("data=csv needs data_path")
        return self

    def template_config(self) -> TemplateConfig:
        return TemplateConfig(
            template=self.template, task=self.task, lookback=self.lookback, channels=self.channels,
            horizon=self.horizon, n_classes=self.n_classes, width=self.width, heads=self.heads,
            n_blocks=self.n_blocks, ffn_hidden=self.ffn_hidden, mixer=self.mixer, patch_len=self.patch_len,
            kernel_size=self.kernel_size, dilation=self.dilation, state_size=self.state_size,
            downsample=self.downsample, normalization=self.normalization, causal_dense=self.causal_dense,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lr=self.lr, steps=self.steps, batch_size=self.batch_size,
                           clip_norm=self.clip_norm, schedule=self.schedule, seed=seed,
                           dense_lr_scale=self.dense_lr_scale)

    @classmethod
    def from_file(cls, path: Union[str, Path, None] = None,
                  overrides: Optional[Dict[str, object]] = None) -> Tuple["ExperimentConfig", Dict[str, str]]:
        """Config from a key=value file with overrides applied; also returns the echo of raw keys"""
        raw: Dict[str, str] = read_key_value_file(path) if path else {}
        unknown = set(raw) - set(cls.model_fields)
        if unknown:
            raise DataFormatError(f"unknown config keys: {', '.join(sorted(unknown))}", path)
        merged: Dict[str, object] = dict(raw)
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        echo = {key: str(value) for key, value in merged.items()}
        return cls(**merged), echo


class ArmReport(BaseModel):
    name: str
    metrics: Dict[str, Optional[float]]
    loss_curve: List[float]
    parameters: Dict[str, int]
    wall_clock: float
    steps: int
    batch_size: int
    lr: float


class SimilarityEntry(BaseModel):
    block: str
    head: int
    psnr: float
    jsd: float
    jsd_random: float
    rank_orig: int
    rank_dense: int
    nuclear_norm_orig: float
    nuclear_norm_dense: float
    psnr_rescaled: bool = False
    jsd_normalization: str = "absolute values"

    @field_validator("psnr", mode="before")
    @classmethod
    def parse_inf(cls, value):
        return _float_or_inf(value)

    @field_serializer("psnr")
    def serialize_psnr(self, value: float):
        return "inf" if math.isinf(value) and value > 0 else value


class RankEntry(BaseModel):
    arm: str
    block: str
    head: int
    family: str
    measure: str
    rank: int
    bound: int
    full_rank: int
    passed: bool


class ExperimentReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    run_id: str
    created_at: datetime
    complete: bool = False
    error: Optional[str] = None
    seed: int
    config: ExperimentConfig
    config_echo: Dict[str, str] = {}
    arms: Dict[str, ArmReport] = {}
    similarity: List[SimilarityEntry] = []
    ranks: List[RankEntry] = []
    notes: List[str] = []
    artifacts: List[str] = []

    @model_validator(mode="after")
    def budget_parity(self):
        if {"orig", "jd"} <= set(self.arms):
            orig, jd = self.arms["orig"], self.arms["jd"]
            if (orig.steps, orig.batch_size, orig.lr) != (jd.steps, jd.batch_size, jd.lr):
                raise ValueError("Orig and JD arms must share steps, batch size and learning rate")
        return self

    def headline(self, arm: str) -> Optional[float]:
        if arm not in self.arms:
            return None
        metrics = self.arms[arm].metrics
        key = "accuracy" if self.config.task is Task.CLASSIFICATION else "mse"
        return metrics.get(key)


class RunSummary(BaseModel):
    run_id: str
    template: str
    mixer: Optional[str] = None
    task: str
    seed: int
    status: str
    orig_metric: Optional[float] = None
    jd_metric: Optional[float] = None
    created_at: datetime


class RunAccepted(BaseModel):
    run_id: str
    status: str = "queued"
