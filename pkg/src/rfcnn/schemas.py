"""Pydantic request/response models for the HTTP service and config files."""

from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator


class SyntheticDatasetConfig(BaseModel):
    kind: Literal["synthetic"] = "synthetic"
    n_classes: int = 5
    pattern_size: int = 7
    n_train: int = 200
    n_test: int = 100
    seed: int = 7
    height: int = 64
    width: int = 64
    label_density: float = 0.3
    template_amplitude: float = 2.0
    confound_amplitude: float = 0.8
    noise_sigma: float = 0.5
    smooth_sigma: float = 0.5
    test_noise_scale: float = 1.3
    test_shift: float = 0.25
    unknown_fraction: float = 0.0


class SpectrogramParams(BaseModel):
    """Front-end settings applied to rank-1 (waveform) container records."""

    n_mels: int = 256
    window_size: int = 2048
    overlap: float = 0.75
    sample_rate: int = 22050
    log_compress: bool = True


class ContainerDatasetConfig(BaseModel):
    kind: Literal["container"] = "container"
    path: str
    manifest: str
    spectrogram: SpectrogramParams = SpectrogramParams()


DatasetConfig = Annotated[
    Union[SyntheticDatasetConfig, ContainerDatasetConfig],
    Field(discriminator="kind"),
]


class TrainParams(BaseModel):
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 1e-4
    mixup_enabled: bool = False
    mixup_concentration: float = 0.2
    seed: int = 0
    eval_window: int = 10
    crop_frames: Optional[int] = None
    checkpoint_every: int = 10
    threshold: float = 0.5


class ExperimentConfig(BaseModel):
    arch: Literal["cp_resnet", "vgg", "ss_resnet"]
    rho: Optional[int] = None
    removed: Optional[int] = None
    width: int = 128
    normalize_input: bool = True
    dataset: DatasetConfig
    train: TrainParams = TrainParams()
    output_dir: str = "runs"

    @model_validator(mode="after")
    def _exactly_one_rf_knob(self):
        if self.arch == "vgg":
            if self.removed is None or self.rho is not None:
                raise ValueError("vgg configs set 'removed' (and not 'rho')")
        else:
            if self.rho is None or self.removed is not None:
                raise ValueError(f"{self.arch} configs set 'rho' (and not 'removed')")
        return self

    @property
    def rf_value(self) -> int:
        return self.removed if self.arch == "vgg" else self.rho


class AnalyzeRequest(BaseModel):
    arch: Literal["cp_resnet", "vgg", "ss_resnet"]
    rho: Optional[int] = None
    removed: Optional[int] = None
    n_classes: int = 10
    width: int = 128


class LayerRow(BaseModel):
    layer_index: int
    kind: str
    k: int
    stride: int
    cumulative_stride: int
    rf: int


class AnalyzeResponse(BaseModel):
    network_name: str
    max_rf: int
    layers: list[LayerRow]
    arch_text: str


class RFTableEntry(BaseModel):
    rho: int
    max_rf: int


class RFTableResponse(BaseModel):
    entries: list[RFTableEntry]


class FinalMetric(BaseModel):
    mean: float
    std: float


class EpochRow(BaseModel):
    epoch: int
    train_loss: float
    test_loss: float
    macro_pr_auc: float
    f1_classical: float
    f1_posneg: float


class TrainResponse(BaseModel):
    run_id: str
    run_dir: str
    arch: str
    rf: int
    epochs: int
    final: dict[str, FinalMetric]
    history: list[EpochRow]
    metrics_csv: str
    checkpoint: str


class EvalRequest(BaseModel):
    checkpoint: str
    dataset: DatasetConfig
    threshold: float = 0.5
    batch_size: int = 64


class EvalResponse(BaseModel):
    test_loss: float
    macro_pr_auc: float
    f1_classical: float
    f1_posneg: float
    threshold: float
    per_class_ap: list[Optional[float]]


class SweepRequest(BaseModel):
    base: ExperimentConfig
    values: list[int]
    parallel: int = 1


class SweepRunResult(BaseModel):
    value: int
    rf: int
    run_id: Optional[str] = None
    status: Literal["completed", "failed"]
    error: Optional[str] = None
    final_epoch: Optional[EpochRow] = None


class SweepResponse(BaseModel):
    runs: list[SweepRunResult]
    csv_path: str


class HealthResponse(BaseModel):
    status: str
    version: str
