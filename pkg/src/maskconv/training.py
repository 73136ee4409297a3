"""End-to-end optimization: loss assembly, SGD, straight-through masks.

One training step runs, in order: binarize the mask latents, forward,
task gradient, per-layer backward, mask gradient plus the weighted
orthogonality gradient, straight-through latent update, then plain SGD on
filters, biases and head weights.  Plain SGD (no momentum, no decay) is
the reference optimizer; loss reductions are mean-over-batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from maskconv.masks import MaskSet, ortho_loss
from maskconv.network import Network

LOSSES = ("cross-entropy", "mean-squared-error")


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 0.1
    lam: float = 0.1
    epochs: int = 2
    batch: int = 64
    seed: int = 0
    loss: str = "cross-entropy"
    determinism: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.lam < 0:
            raise ValueError(f"orthogonality weight must be >= 0, got {self.lam}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its logits gradient; labels are class ids."""
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(
            f"label out of range: saw {labels.min()}..{labels.max()} "
            f"for {n_classes} classes"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -float(np.mean(log_p[np.arange(n), labels]))
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)


def mean_squared_error(preds: np.ndarray, targets: np.ndarray):
    """0.5 * mean-over-batch squared error and its gradient."""
    diff = preds - targets
    n = preds.shape[0]
    loss = 0.5 * float(np.sum(diff * diff)) / n
    return loss, (diff / n).astype(preds.dtype)


def task_loss_and_grad(logits, targets, loss: str):
    if loss == "cross-entropy":
        return softmax_cross_entropy(logits, targets)
    return mean_squared_error(logits, targets)


def total_loss(
    logits: np.ndarray,
    targets: np.ndarray,
    mask_sets: list[MaskSet],
    lam: float,
    loss: str = "cross-entropy",
) -> float:
    """Task loss plus ``lam`` times the summed orthogonality penalties."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    task, _ = task_loss_and_grad(logits, targets, loss)
    return task + lam * sum(ortho_loss(m) for m in mask_sets)


def sgd_step(bank, grad_filters, grad_biases, lr: float):
    """One bare SGD update on a filter bank (biases updated identically)."""
    bank.filters = bank.filters - lr * grad_filters
    if bank.biases is not None and grad_biases is not None:
        bank.biases = bank.biases - lr * grad_biases
    return bank


def train_step(batch, model: Network, config: TrainConfig):
    """One optimization step; returns (total loss, metrics dict)."""
    xb, yb = batch
    flip_rate = model.binarize_masks()
    logits = model.forward(xb)
    task, grad_logits = task_loss_and_grad(logits, yb, config.loss)
    ortho = model.ortho_loss()
    loss = task + config.lam * ortho
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss (task={task}, ortho={ortho}); "
            f"logit range [{logits.min()}, {logits.max()}]"
        )
    model.backward(grad_logits)
    model.update_masks(config.lr, config.lam)
    model.sgd(config.lr)
    metrics = {
        "loss": loss,
        "task_loss": task,
        "ortho_loss": ortho,
        "flip_rate": flip_rate,
    }
    if config.loss == "cross-entropy":
        metrics["accuracy"] = float(np.mean(np.argmax(logits, axis=1) == yb))
    return loss, metrics


def format_log_record(step: int, metrics: dict) -> str:
    fields = [f"step={step}"]
    for key in ("loss", "task_loss", "ortho_loss", "accuracy", "flip_rate"):
        if key in metrics:
            fields.append(f"{key}={metrics[key]:.6f}")
    return " ".join(fields)


@dataclass
class History:
    records: list[dict] = field(default_factory=list)

    def append(self, metrics: dict):
        self.records.append(metrics)

    def last(self, key: str):
        return self.records[-1][key]


def fit(
    model: Network,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    log=None,
    steps: int | None = None,
) -> History:
    """Mini-batch training over a fixed dataset.

    Shuffling comes from the config seed, so two runs with the same seed
    and determinism flag visit identical batches.  ``log`` receives one
    line-delimited record per step.  ``steps`` caps the total step count.
    """
    rng = np.random.default_rng(config.seed)
    history = History()
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(images))
        for start in range(0, len(images), config.batch):
            idx = order[start : start + config.batch]
            loss, metrics = train_step((images[idx], labels[idx]), model, config)
            step += 1
            history.append({"step": step, **metrics})
            if log is not None:
                log(format_log_record(step, metrics))
            if steps is not None and step >= steps:
                return history
    return history


def evaluate(model: Network, images: np.ndarray, labels: np.ndarray, batch: int = 256) -> float:
    """Classification accuracy over a dataset."""
    hits = 0
    for start in range(0, len(images), batch):
        logits = model.forward(images[start : start + batch])
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[start : start + batch]))
    return hits / len(images)
