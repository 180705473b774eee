"""Experiment orchestration: run directories, single runs, RF sweeps.

Every run writes a self-contained directory under the configured output
dir: the resolved config snapshot, a long-format metrics CSV, a summary
and checkpoints. The run id is a digest of the resolved config, so a run
can be reproduced bit-identically from its snapshot alone.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .arch import ArchSpec, build_cp_resnet, build_ss_resnet, build_vgg
from .checkpoint import load_checkpoint, restore_model
from .data import (
    NormalizationStats,
    SpectrogramConfig,
    Split,
    TaggingDataset,
    dataset_from_container,
    generate_synthetic,
    normalize,
)
from .errors import TrainingDivergedError
from .metrics import CSV_HEADER, MetricsReport
from .model import instantiate
from .rf import compute_rf
from .schemas import (
    ContainerDatasetConfig,
    EpochRow,
    EvalRequest,
    EvalResponse,
    ExperimentConfig,
    SweepRunResult,
    SyntheticDatasetConfig,
)
from .training import TrainConfig, TrainReport, evaluate_model, train_model

SWEEP_CSV_COLUMNS = [
    "rf", "arch", "train_loss", "test_loss",
    "macro_pr_auc", "f1_classical", "f1_posneg", "epoch",
]


def build_spec(cfg: ExperimentConfig, n_classes: int) -> ArchSpec:
    if cfg.arch == "cp_resnet":
        return build_cp_resnet(cfg.rho, n_classes, base_width=cfg.width)
    if cfg.arch == "ss_resnet":
        return build_ss_resnet(cfg.rho, n_classes, base_width=cfg.width)
    return build_vgg(cfg.removed, n_classes, base_width=cfg.width)


def load_dataset(dataset_cfg) -> TaggingDataset:
    if isinstance(dataset_cfg, SyntheticDatasetConfig):
        c = dataset_cfg
        return generate_synthetic(
            n_classes=c.n_classes,
            pattern_size=c.pattern_size,
            n_train=c.n_train,
            n_test=c.n_test,
            seed=c.seed,
            height=c.height,
            width=c.width,
            label_density=c.label_density,
            template_amplitude=c.template_amplitude,
            confound_amplitude=c.confound_amplitude,
            noise_sigma=c.noise_sigma,
            smooth_sigma=c.smooth_sigma,
            test_noise_scale=c.test_noise_scale,
            test_shift=c.test_shift,
            unknown_fraction=c.unknown_fraction,
        )
    if isinstance(dataset_cfg, ContainerDatasetConfig):
        for path in (dataset_cfg.path, dataset_cfg.manifest):
            if not Path(path).exists():
                raise FileNotFoundError(f"dataset file not found: {path}")
        sp = dataset_cfg.spectrogram
        spectrogram = SpectrogramConfig(
            n_mels=sp.n_mels, window_size=sp.window_size, overlap=sp.overlap,
            sample_rate=sp.sample_rate, log_compress=sp.log_compress,
        )
        return dataset_from_container(dataset_cfg.path, dataset_cfg.manifest, spectrogram)
    raise ValueError(f"unsupported dataset config {type(dataset_cfg).__name__}")


def normalize_dataset(dataset: TaggingDataset) -> TaggingDataset:
    """Standardize both splits with statistics from the training split only."""
    stats = NormalizationStats.from_training_split(dataset.train.x)

    def apply(split: Split) -> Split:
        return Split(
            x=[normalize(a, stats).astype(np.float32) for a in split.x],
            y=split.y,
            mask=split.mask,
        )

    dataset.train = apply(dataset.train)
    dataset.test = apply(dataset.test)
    return dataset


def run_id_for(cfg: ExperimentConfig) -> str:
    resolved = cfg.model_dump()
    resolved.pop("output_dir")  # where a run lands does not change what it computes
    blob = json.dumps(resolved, sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def _write_metrics_csv(path: Path, run_id: str, rf: int, arch: str, report: TrainReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in report.history:
            for name in ("train_loss", "test_loss", "macro_pr_auc", "f1_classical", "f1_posneg"):
                writer.writerow([run_id, row["epoch"], rf, arch, name, repr(row[name])])


class RunResult:
    def __init__(self, run_id: str, run_dir: Path, arch: str, rf: int, report: TrainReport):
        self.run_id = run_id
        self.run_dir = run_dir
        self.arch = arch
        self.rf = rf
        self.report = report


def run_training(cfg: ExperimentConfig) -> RunResult:
    dataset = load_dataset(cfg.dataset)
    if cfg.normalize_input:
        dataset = normalize_dataset(dataset)
    spec = build_spec(cfg, dataset.n_classes)
    rf = compute_rf(spec).max_rf

    run_id = run_id_for(cfg)
    run_dir = Path(cfg.output_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(cfg.model_dump(), indent=2, sort_keys=True) + "\n"
    )
    (run_dir / "arch.txt").write_text(spec.to_text())

    model = instantiate(spec, seed=cfg.train.seed)
    train_cfg = TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        learning_rate=cfg.train.learning_rate,
        mixup_enabled=cfg.train.mixup_enabled,
        mixup_concentration=cfg.train.mixup_concentration,
        seed=cfg.train.seed,
        eval_window=cfg.train.eval_window,
        crop_frames=cfg.train.crop_frames,
        checkpoint_every=cfg.train.checkpoint_every,
        threshold=cfg.train.threshold,
    )
    report = train_model(model, dataset, train_cfg, run_dir=run_dir)

    _write_metrics_csv(run_dir / "metrics.csv", run_id, rf, cfg.arch, report)
    (run_dir / "history.json").write_text(json.dumps(report.history, indent=2) + "\n")
    summary = {
        "run_id": run_id,
        "arch": cfg.arch,
        "rf": rf,
        "epochs": cfg.train.epochs,
        "final": {k: {"mean": m, "std": s} for k, (m, s) in report.final.items()},
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(run_id, run_dir, cfg.arch, rf, report)


def run_eval(request: EvalRequest) -> EvalResponse:
    if not Path(request.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {request.checkpoint}")
    model = restore_model(load_checkpoint(request.checkpoint))
    dataset = load_dataset(request.dataset)
    test_loss, report, _ = evaluate_model(
        model, dataset.test, threshold=request.threshold, batch_size=request.batch_size
    )
    return EvalResponse(
        test_loss=test_loss,
        macro_pr_auc=report.macro_pr_auc,
        f1_classical=report.macro_f1_classical,
        f1_posneg=report.macro_f1_posneg,
        threshold=report.threshold,
        per_class_ap=report.per_class_ap,
    )


def _final_epoch_row(report: TrainReport) -> EpochRow:
    return EpochRow(**report.history[-1])


def run_sweep(
    base: ExperimentConfig,
    values: list[int],
    parallel: int = 1,
) -> tuple[list[SweepRunResult], Path]:
    """Train one model per RF setting on the same seeded dataset.

    Failures are recorded per run; completed runs keep their artifacts
    and their rows in the combined CSV either way.
    """
    if not values:
        raise ValueError("sweep needs at least one rho / removal value")

    def config_for(value: int) -> ExperimentConfig:
        data = base.model_dump()
        if base.arch == "vgg":
            data["removed"] = value
            data["rho"] = None
        else:
            data["rho"] = value
            data["removed"] = None
        return ExperimentConfig.model_validate(data)

    def run_one(value: int) -> SweepRunResult:
        cfg = config_for(value)
        rf = compute_rf(build_spec(cfg, n_classes=1)).max_rf
        try:
            result = run_training(cfg)
            return SweepRunResult(
                value=value, rf=rf, run_id=result.run_id, status="completed",
                final_epoch=_final_epoch_row(result.report),
            )
        except TrainingDivergedError as exc:
            return SweepRunResult(value=value, rf=rf, status="failed", error=str(exc))

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(run_one, values))
    else:
        results = [run_one(v) for v in values]

    out_dir = Path(base.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_COLUMNS)
        for res in results:
            if res.status != "completed":
                continue
            run_dir = out_dir / res.run_id
            history = json.loads((run_dir / "history.json").read_text())
            for row in history:
                writer.writerow([
                    res.rf, base.arch, repr(row["train_loss"]), repr(row["test_loss"]),
                    repr(row["macro_pr_auc"]), repr(row["f1_classical"]),
                    repr(row["f1_posneg"]), row["epoch"],
                ])
    return results, csv_path
