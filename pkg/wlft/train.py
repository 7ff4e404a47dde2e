"""
Training engine: step-decay SGD with momentum, per-epoch evaluation, CSV logging,
periodic/best checkpoints, resume and repeated seeded runs.
"""

import csv
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from autograd import backward, default_dtype, no_grad, sgd_step, zero_grad
from checkpoint import CheckpointMeta, load_checkpoint, restore, save_checkpoint
from config import RunConfig, TrainConfig
from dataset import DataPipeline, Split
from errors import ConfigError, MetricError, NumericalError
from events import EventAction, EventSeverity, log_event
from metrics import ConfusionMatrix, confusion, recall, top1_accuracy
from model import ResNetWT, build_model, loss_terms, predict_proba

LOG_COLUMNS = ["epoch", "lr", "train_loss", "train_ce", "train_loss_wt", "val_acc", "val_recall"]


class EpochLog(BaseModel):
    epoch: int
    lr: float
    train_loss: float = Field(description="Mean over batches of CE + wavelet loss")
    train_ce: float
    train_loss_wt: float
    val_acc: float
    val_recall: float = Field(description="nan when the evaluated split has no positive sample")

    def row(self) -> List[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, c))) for c in LOG_COLUMNS[1:]]


class EvalResult(BaseModel):
    """Per-sample outputs of one evaluation pass."""
    split: Split
    paths: List[str]
    labels: List[int]
    predictions: List[int]
    scores: List[float] = Field(description="Positive-class probability per sample")
    accuracy: float
    recall: float
    confusion: ConfusionMatrix


class TrainResult(BaseModel):
    history: List[EpochLog] = Field(default_factory=list)
    final_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    best_val_acc: Optional[float] = None
    epochs_completed: int = 0


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """lr0 halved every lr_half_period epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_half_period)


def eval_split(pipeline: DataPipeline) -> Split:
    return Split.VAL if pipeline.manifest.has_split(Split.VAL) else Split.TEST


def evaluate(
    model: ResNetWT,
    pipeline: DataPipeline,
    split: Split,
    batch_size: int = 8,
    positive_class: int = 1,
) -> EvalResult:
    """Eval-mode pass over a split without augmentation or shuffling."""
    if not 0 <= positive_class < model.config.num_classes:
        raise ConfigError(f"positive_class={positive_class} but the model has {model.config.num_classes} classes")
    was_training = model.training
    model.eval()
    paths, labels, predictions, scores = [], [], [], []
    try:
        with no_grad():
            for images, batch_labels, batch_paths in pipeline.batch_iter(
                split, batch_size, shuffle=False, augment_samples=False,
            ):
                logits, _ = model(images)
                proba = predict_proba(logits).data
                paths.extend(batch_paths)
                labels.extend(int(v) for v in batch_labels)
                predictions.extend(int(v) for v in proba.argmax(axis=1))
                scores.extend(float(v) for v in proba[:, positive_class])
    finally:
        model.train(was_training)

    cm = confusion(predictions, labels, positive_class)
    try:
        split_recall = recall(cm)
    except MetricError:
        split_recall = math.nan
    return EvalResult(
        split=Split(split), paths=paths, labels=labels, predictions=predictions, scores=scores,
        accuracy=top1_accuracy(predictions, labels), recall=split_recall, confusion=cm,
    )


def _resolve(out_dir: Path, name: str) -> Path:
    path = Path(name)
    return path if path.is_absolute() else out_dir / path


def _append_log(path: Path, entry: EpochLog, fresh: bool):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_header = fresh or not path.exists()
    with path.open("w" if fresh else "a", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if write_header:
            writer.writerow(LOG_COLUMNS)
        writer.writerow(entry.row())


def read_log(path: Path) -> List[EpochLog]:
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        return [EpochLog(**row) for row in csv.DictReader(f)]


def train_epoch(model: ResNetWT, pipeline: DataPipeline, run: RunConfig, epoch: int) -> Dict[str, float]:
    """
    One pass over the train split: forward, loss, backward, SGD step, zero grads.

    Raises:
        NumericalError: carrying the index of the batch that produced a non-finite value
    """
    cfg = run.train
    lr = lr_schedule(epoch, cfg)
    params = model.parameters()
    model.train()
    totals = {"loss": 0.0, "ce": 0.0, "wt": 0.0}
    batches = 0
    for batch_index, (images, labels, _) in enumerate(pipeline.batch_iter(Split.TRAIN, cfg.batch_size, epoch)):
        try:
            logits, branch = model(images)
            ce, wt = loss_terms(logits, labels, branch, cfg.alpha, cfg.beta)
            loss = ce if wt is None else ce + wt
            if not math.isfinite(loss.item()):
                raise NumericalError("non-finite training loss")
            backward(loss)
        except NumericalError as e:
            raise NumericalError(e.message, batch_index=batch_index) from e
        sgd_step(params, lr, cfg.momentum)
        zero_grad(params)
        totals["loss"] += loss.item()
        totals["ce"] += ce.item()
        totals["wt"] += wt.item() if wt is not None else 0.0
        batches += 1
    return {"lr": lr, **{k: v / batches for k, v in totals.items()}}


def train(
    model: ResNetWT,
    pipeline: DataPipeline,
    run: RunConfig,
    out_dir: Path,
    start_epoch: int = 0,
    best_val_acc: Optional[float] = None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """
    Train from start_epoch to run.train.epochs, logging one CSV row per epoch.

    Checkpoints go to <checkpoint_dir>/epoch_XXXX.ckpt every checkpoint_every
    epochs, last.ckpt after every epoch and best.ckpt whenever validation
    accuracy improves.
    """
    cfg = run.train
    out_dir = Path(out_dir)
    log_path = _resolve(out_dir, cfg.log_path)
    ckpt_dir = _resolve(out_dir, cfg.checkpoint_dir)
    result = TrainResult(best_val_acc=best_val_acc, epochs_completed=start_epoch)
    split = eval_split(pipeline)

    with default_dtype(np.dtype(cfg.precision.value)):
        for epoch in range(start_epoch, cfg.epochs):
            try:
                stats = train_epoch(model, pipeline, run, epoch)
            except NumericalError as e:
                log_event(EventAction.TRAIN_NUMERICAL_ABORT, out_dir, EventSeverity.ERROR, error=e, epoch=epoch)
                raise
            evaluation = evaluate(model, pipeline, split, cfg.batch_size, cfg.positive_class)
            entry = EpochLog(
                epoch=epoch, lr=stats["lr"], train_loss=stats["loss"], train_ce=stats["ce"],
                train_loss_wt=stats["wt"], val_acc=evaluation.accuracy, val_recall=evaluation.recall,
            )
            _append_log(log_path, entry, fresh=epoch == 0)
            result.history.append(entry)
            result.epochs_completed = epoch + 1
            log_event(EventAction.TRAIN_EPOCH_COMPLETE, out_dir, **entry.model_dump())
            if on_epoch is not None:
                on_epoch(entry)

            meta = CheckpointMeta(
                epoch=epoch + 1, seed=cfg.seed, best_val_acc=result.best_val_acc, config=run.flat(),
            )
            if result.best_val_acc is None or evaluation.accuracy > result.best_val_acc:
                result.best_val_acc = evaluation.accuracy
                meta.best_val_acc = evaluation.accuracy
                best = save_checkpoint(ckpt_dir / "best.ckpt", model, meta)
                result.best_checkpoint = str(best)
                log_event(EventAction.TRAIN_BEST_CHECKPOINT, out_dir, epoch=epoch, val_acc=evaluation.accuracy)
            last = save_checkpoint(ckpt_dir / "last.ckpt", model, meta)
            result.final_checkpoint = str(last)
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
                path = save_checkpoint(ckpt_dir / f"epoch_{epoch + 1:04d}.ckpt", model, meta)
                log_event(EventAction.TRAIN_CHECKPOINT, out_dir, epoch=epoch, path=str(path))
    return result


def resume(
    checkpoint_path: Path,
    run: RunConfig,
    pipeline: DataPipeline,
    out_dir: Path,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """
    Continue training from a checkpoint.

    Parameters, momentum buffers and batchnorm statistics come from the file; data
    and augmentation streams are derived from (seed, epoch, index), so the resumed
    run retraces the uninterrupted one.

    Raises:
        CheckpointError: unreadable file or any name/shape mismatch with the configured model
    """
    checkpoint = load_checkpoint(checkpoint_path)
    with default_dtype(np.dtype(run.train.precision.value)):
        model = build_model(run.model, run.train.seed)
        restore(model, checkpoint)
    start = checkpoint.meta.epoch
    log_event(EventAction.TRAIN_RESUME, out_dir, checkpoint=str(checkpoint_path), epoch=start)
    if start >= run.train.epochs:
        print(f"✅ Checkpoint already at epoch {start} of {run.train.epochs}; nothing to resume")
        return TrainResult(
            final_checkpoint=str(checkpoint_path), best_val_acc=checkpoint.meta.best_val_acc, epochs_completed=start,
        )
    return train(
        model, pipeline, run, out_dir,
        start_epoch=start, best_val_acc=checkpoint.meta.best_val_acc, on_epoch=on_epoch,
    )


class RepeatSummary(BaseModel):
    runs: int
    accuracies: List[float]
    recalls: List[float]
    accuracy_mean: float
    accuracy_std: float
    recall_mean: float
    recall_std: float


def _mean_std(values: List[float]):
    array = np.asarray(values, dtype=np.float64)
    return float(np.nanmean(array)), float(np.nanstd(array))


def repeat_runs(
    run: RunConfig,
    pipeline_factory: Callable[[int], DataPipeline],
    n: int,
    out_dir: Path,
    base_seed: Optional[int] = None,
) -> RepeatSummary:
    """
    Train and test n independently seeded runs; report mean and std of test accuracy/recall.

    Run r uses seed base_seed + r for both model initialization and data streams.
    """
    if n < 1:
        raise ValueError(f"need at least one run, got {n}")
    base_seed = run.train.seed if base_seed is None else base_seed
    accuracies, recalls = [], []
    for r in range(n):
        seeded = run.with_overrides(seed=base_seed + r)
        run_dir = Path(out_dir) / f"run{r}"
        pipeline = pipeline_factory(base_seed + r)
        with default_dtype(np.dtype(seeded.train.precision.value)):
            model = build_model(seeded.model, seeded.train.seed)
            train(model, pipeline, seeded, run_dir)
            result = evaluate(model, pipeline, Split.TEST, seeded.train.batch_size, seeded.train.positive_class)
        accuracies.append(result.accuracy)
        recalls.append(result.recall)
    acc_mean, acc_std = _mean_std(accuracies)
    rec_mean, rec_std = _mean_std(recalls)
    return RepeatSummary(
        runs=n, accuracies=accuracies, recalls=recalls,
        accuracy_mean=acc_mean, accuracy_std=acc_std, recall_mean=rec_mean, recall_std=rec_std,
    )
