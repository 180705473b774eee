"""Training loop: Adam, optional mixup, per-epoch evaluation, checkpoints.

Each epoch trains over shuffled batches and then evaluates the test split
in eval mode (shake coefficients pinned at 0.5, batchnorm running
statistics frozen). The report carries the full per-epoch history plus
mean and standard deviation of every metric over the final
``eval_window`` epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import Split, TaggingDataset, random_crop
from .errors import TrainingDivergedError
from .metrics import MetricsReport, PredictionSet, evaluate
from .model import Model
from .nn import bce_with_logits
from .optim import Adam
from .tensor import Tensor, no_grad, sigmoid_array

METRIC_NAMES = ("train_loss", "test_loss", "macro_pr_auc", "f1_classical", "f1_posneg")


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 1e-4  # paper leaves this unstated; plain constant schedule
    mixup_enabled: bool = False
    mixup_concentration: float = 0.2
    seed: int = 0
    eval_window: int = 10
    crop_frames: int | None = None  # random time crop per sample per batch
    checkpoint_every: int = 10
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eval_window > self.epochs:
            raise ValueError("eval_window must not exceed epochs")
        if self.mixup_enabled and self.mixup_concentration <= 0.0:
            raise ValueError("mixup_concentration must be > 0 when mixup is enabled")


@dataclass
class TrainReport:
    history: list[dict] = field(default_factory=list)
    final: dict[str, tuple[float, float]] = field(default_factory=dict)

    def last_window_stats(self, eval_window: int) -> dict[str, tuple[float, float]]:
        window = self.history[-eval_window:]
        stats = {}
        for name in METRIC_NAMES:
            values = np.array([row[name] for row in window], dtype=np.float64)
            stats[name] = (float(values.mean()), float(values.std()))
        return stats


def mixup_batch(x1, y1, x2, y2, lam: float, mask1=None, mask2=None):
    """Convex combination of two batches; masks combine by known-AND.

    A pair's label is unknown if it is unknown in either source, so the
    unknown set of the mix is the union of the two unknown sets.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    x = lam * x1 + (1.0 - lam) * x2
    y = lam * y1 + (1.0 - lam) * y2
    if mask1 is None and mask2 is None:
        return x, y, None
    mask1 = np.ones(y1.shape, dtype=bool) if mask1 is None else mask1
    mask2 = np.ones(y2.shape, dtype=bool) if mask2 is None else mask2
    return x, y, mask1 & mask2


def _assemble(
    xs: list[np.ndarray],
    crop_frames: int | None,
    rng: np.random.Generator | None,
) -> np.ndarray:
    if crop_frames is None:
        return np.stack(xs)
    out = []
    for sample in xs:
        if rng is not None:
            out.append(random_crop(sample, crop_frames, rng))
        else:
            start = max((sample.shape[-1] - crop_frames) // 2, 0)
            out.append(sample[..., start : start + crop_frames])
    return np.stack(out)


def evaluate_model(
    model: Model,
    split: Split,
    threshold: float = 0.5,
    batch_size: int = 64,
    crop_frames: int | None = None,
) -> tuple[float, MetricsReport, np.ndarray]:
    """Eval-mode pass over a split: (mean loss, metrics, probabilities)."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    logits_rows = []
    loss_sum = 0.0
    known_total = 0
    with no_grad():
        for start in range(0, len(split), batch_size):
            xs = split.x[start : start + batch_size]
            x = Tensor(_assemble(xs, crop_frames, None))
            y = split.y[start : start + batch_size]
            mask = split.mask[start : start + batch_size]
            logits = model.forward(x, mode="eval")
            known = int(mask.sum())
            if known:
                loss = bce_with_logits(logits, y.astype(model.dtype), mask)
                loss_sum += loss.item() * known
                known_total += known
            logits_rows.append(logits.data)
    all_logits = np.concatenate(logits_rows, axis=0)
    scores = sigmoid_array(all_logits.astype(np.float64))
    preds = PredictionSet(scores=scores, labels=(split.y >= 0.5).astype(int), mask=split.mask)
    report = evaluate(preds, threshold)
    return loss_sum / max(known_total, 1), report, scores


def train_model(
    model: Model,
    dataset: TaggingDataset,
    cfg: TrainConfig,
    run_dir: Path | str | None = None,
) -> TrainReport:
    """Run the full protocol and return per-epoch history plus window stats."""
    if len(dataset.train) == 0 or len(dataset.test) == 0:
        raise ValueError("both train and test splits must be non-empty")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    data_ss, shake_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    data_rng = np.random.Generator(np.random.PCG64(data_ss))
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    report = TrainReport()
    n_train = len(dataset.train)
    global_step = 0

    for epoch in range(1, cfg.epochs + 1):
        order = data_rng.permutation(n_train)
        loss_sum = 0.0
        known_total = 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xs = [dataset.train.x[i] for i in idx]
            x = _assemble(xs, cfg.crop_frames, data_rng)
            y = dataset.train.y[idx].astype(model.dtype)
            mask = dataset.train.mask[idx]
            if cfg.mixup_enabled:
                lam = float(data_rng.beta(cfg.mixup_concentration, cfg.mixup_concentration))
                perm = data_rng.permutation(len(idx))
                x, y, mask = mixup_batch(x, y, x[perm], y[perm], lam, mask, mask[perm])
            global_step += 1
            logits = model.forward(
                Tensor(x.astype(model.dtype)), mode="train",
                shake_seed=shake_ss.spawn(1)[0],
            )
            loss = bce_with_logits(logits, y, mask)
            if not math.isfinite(loss.item()):
                raise TrainingDivergedError(
                    f"non-finite loss {loss.item()} in epoch {epoch}", step=global_step
                )
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            known = int(mask.sum()) if mask is not None else y.size
            loss_sum += loss.item() * known
            known_total += known

        test_loss, metrics_report, _ = evaluate_model(
            model, dataset.test, threshold=cfg.threshold,
            batch_size=cfg.batch_size, crop_frames=cfg.crop_frames,
        )
        report.history.append(
            {
                "epoch": epoch,
                "train_loss": loss_sum / max(known_total, 1),
                "test_loss": test_loss,
                "macro_pr_auc": metrics_report.macro_pr_auc,
                "f1_classical": metrics_report.macro_f1_classical,
                "f1_posneg": metrics_report.macro_f1_posneg,
            }
        )
        if run_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            ckpt.save_checkpoint(run_dir / f"checkpoint_epoch{epoch:04d}.rfcnn", model, optimizer)

    if run_dir is not None:
        ckpt.save_checkpoint(run_dir / "checkpoint_final.rfcnn", model, optimizer)
    report.final = report.last_window_stats(cfg.eval_window)
    return report
