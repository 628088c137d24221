"""Training loop, evaluation and the run-directory metrics log."""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ..autograd import Tensor, backward, no_grad, ops
from ..data import CIFAR10, Dataset, batch_iter, cifar10_split, num_batches, synthetic_dataset
from ..errors import ConfigError, NumericError, TrainingError
from ..layers import ParamStore
from ..models.checkpoint import save_checkpoint
from .optim import OptimState, adamw_step
from .schedule import lr_at

if TYPE_CHECKING:
    from ..config import RunConfig

logger = logging.getLogger(__name__)

METRICS_FILENAME = "metrics.jsonl"
CHECKPOINT_DIR = "checkpoints"
EVAL_BATCH_SIZE = 64

Model = Callable[[Tensor], Tensor]


class MetricsLog:
    """Newline-delimited JSON records, one per step and one per epoch."""

    def __init__(self, run_dir: Optional[Union[str, Path]] = None) -> None:
        self.records: List[Dict] = []
        self.path = None if run_dir is None else Path(run_dir) / METRICS_FILENAME
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, kind: str, **fields) -> Dict:
        record = {"kind": kind, **fields}
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
        return record

    def of_kind(self, kind: str) -> List[Dict]:
        return [r for r in self.records if r["kind"] == kind]


@dataclass
class TrainResult:
    steps: int
    epochs: int
    optim: OptimState
    log: MetricsLog
    checkpoints: List[Path] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [r["loss"] for r in self.log.of_kind("step")]

    @property
    def lrs(self) -> List[float]:
        return [r["lr"] for r in self.log.of_kind("step")]


def predict(model: Model, dataset: Dataset, batch_size: int = EVAL_BATCH_SIZE,
            resolution: Optional[int] = None) -> np.ndarray:
    """Logits for every sample in dataset order, computed in eval mode without a graph."""
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    outputs = []
    try:
        with no_grad():
            for batch in batch_iter(dataset, batch_size, shuffle=False, resolution=resolution):
                outputs.append(model(Tensor(batch.images)).data)
    finally:
        if was_training and hasattr(model, "train"):
            model.train()
    if not outputs:
        return np.zeros((0, dataset.num_classes))
    return np.concatenate(outputs)


def top1(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax equals the label; ties go to the lowest index."""
    if len(labels) == 0:
        raise ConfigError("top-1 accuracy of an empty set")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(model: Model, dataset: Dataset, batch_size: int = EVAL_BATCH_SIZE,
             resolution: Optional[int] = None) -> float:
    """Top-1 accuracy with BN running statistics (eval mode)."""
    return top1(predict(model, dataset, batch_size, resolution), dataset.labels)


def load_datasets(config: "RunConfig") -> Tuple[Dataset, Dataset]:
    """(train, eval) datasets for a run.

    The synthetic source evaluates on its own training set, since it is a
    memorization target.
    """
    data = config.data
    if data.source == CIFAR10:
        train_set = cifar10_split(data.root, "train", data.mean, data.std)
        test_set = cifar10_split(data.root, "test", data.mean, data.std)
        if data.train_subset is not None:
            train_set = train_set.subset(slice(0, data.train_subset))
        if data.test_subset is not None:
            test_set = test_set.subset(slice(0, data.test_subset))
    else:
        train_set = synthetic_dataset(
            data.synthetic_size, config.model.num_classes, resolution=32, seed=config.seed
        )
        test_set = train_set
    if train_set.num_classes > config.model.num_classes:
        raise ConfigError(
            f"dataset has {train_set.num_classes} classes, model head only {config.model.num_classes}"
        )
    return train_set, test_set


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; return the norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


def train_step(
    model: Model,
    store: ParamStore,
    images: np.ndarray,
    labels: np.ndarray,
    optim: OptimState,
    lr: float,
    smoothing: float = 0.0,
    grad_clip: Optional[float] = None,
) -> Tuple[float, np.ndarray]:
    """One forward/backward/AdamW step; returns (loss, logits)."""
    store.zero_grad()
    logits = model(Tensor(images))
    loss = ops.cross_entropy(logits, labels, smoothing)
    backward(loss)
    grads = {e.name: e.tensor.grad for e in store.trainable() if e.tensor.grad is not None}
    if grad_clip is not None:
        clip_gradients(grads, grad_clip)
    adamw_step(store, grads, optim, lr)
    return loss.item(), logits.data


def train(
    model: Model,
    store: ParamStore,
    train_set: Dataset,
    config: "RunConfig",
    eval_set: Optional[Dataset] = None,
    run_dir: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Train ``model`` with AdamW and the warmup-cosine schedule.

    Writes ``metrics.jsonl`` and checkpoints into ``run_dir`` when given.

    Raises:
        TrainingError: If the loss (or any activation) becomes non-finite;
            carries the step index and the learning rate in use.
    """
    schedule = config.schedule
    bs = config.data.batch_size
    steps_per_epoch = num_batches(len(train_set), bs)
    total_steps = schedule.total_epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    o = config.optim
    optim = OptimState(
        lr=schedule.base_lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps, weight_decay=o.weight_decay
    )
    log = MetricsLog(run_dir)
    result = TrainResult(0, 0, optim, log)
    resolution = config.model.resolution
    logger.info(
        f"training for {total_steps} steps ({steps_per_epoch} per epoch, batch {bs}) "
        f"on {len(train_set)} samples"
    )

    step = 0
    model.train()
    for epoch in range(schedule.total_epochs):
        if step >= total_steps:
            break
        correct = seen = 0
        for batch in batch_iter(
            train_set, bs, config.seed, epoch, augment=config.data.augment,
            prefetch=config.data.prefetch, resolution=resolution,
        ):
            if step >= total_steps:
                break
            lr = lr_at(schedule, step, steps_per_epoch)
            try:
                loss, logits = train_step(
                    model, store, batch.images, batch.labels, optim, lr, o.label_smoothing, o.grad_clip
                )
            except NumericError as e:
                logger.error(f"non-finite value at step {step} (lr {lr:.3g}): {e}")
                raise TrainingError(f"non-finite loss at step {step} (lr {lr:.6g}): {e}", step, lr) from e
            correct += int(np.sum(np.argmax(logits, axis=1) == batch.labels))
            seen += len(batch)
            log.write("step", step=step, epoch=epoch, lr=lr, loss=loss)
            logger.debug(f"step {step} epoch {epoch}: loss {loss:.6f} lr {lr:.3g}")
            step += 1

        record = {"epoch": epoch, "steps": step, "train_top1": correct / max(1, seen)}
        if eval_set is not None and config.eval_every and (epoch + 1) % config.eval_every == 0:
            record["top1"] = evaluate(model, eval_set, resolution=resolution)
        log.write("epoch", **record)
        logger.info(
            f"epoch {epoch}: train top-1 {record['train_top1']:.4f}"
            + (f", eval top-1 {record['top1']:.4f}" if "top1" in record else "")
        )
        if run_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            path = Path(run_dir) / CHECKPOINT_DIR / f"epoch{epoch + 1:04d}.smlp"
            result.checkpoints.append(save_checkpoint(path, store, optim))
        result.epochs = epoch + 1

    result.steps = step
    if run_dir is not None:
        result.checkpoints.append(save_checkpoint(Path(run_dir) / CHECKPOINT_DIR / "last.smlp", store, optim))
    return result
