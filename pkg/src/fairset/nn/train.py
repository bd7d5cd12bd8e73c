"""SGD-with-momentum training loop, deterministic under a fixed seed."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DivergenceError
from ..idx import ImageSet
from .loss import softmax_cross_entropy
from .model import DEFAULT_DROPOUT, CnnModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 3
    seed: int = 0
    dropout_rates: tuple = DEFAULT_DROPOUT

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate {self.learning_rate} must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch size {self.batch_size} must be >= 1")


def train(model: CnnModel, train_set: ImageSet, config: TrainConfig) -> list[dict]:
    """Train in place; returns the per-epoch loss/accuracy trace.

    Images are scaled to [0,1] internally. The model is left in infer mode,
    ready for feature extraction.
    """
    x_all = (train_set.images.astype(model.dtype) / 255.0).reshape(-1, 1, 28, 28)
    y_all = train_set.labels.astype(np.int64)
    n = x_all.shape[0]
    shuffle_rng = np.random.default_rng(config.seed)

    velocity = {id(layer): {} for layer, _ in model.parameters()}
    for layer, name in model.parameters():
        velocity[id(layer)][name] = np.zeros_like(layer.params[name])

    model.mode = "train"
    trace = []
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        losses = []
        correct = 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            logits = model.forward(xb, train=True)
            loss, dlogits = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"loss diverged at epoch {epoch} step {step}", epoch=epoch, step=step
                )
            model.backward(dlogits)
            for layer, name in model.parameters():
                v = velocity[id(layer)][name]
                v *= config.momentum
                v -= config.learning_rate * layer.grads[name]
                layer.params[name] += v
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == yb).sum())
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "accuracy": correct / n}
        log.info("epoch %d: loss %.4f acc %.4f", epoch, entry["loss"], entry["accuracy"])
        trace.append(entry)
    model.mode = "infer"
    return trace


def evaluate_accuracy(model: CnnModel, image_set: ImageSet, batch_size: int = 512) -> float:
    """Fraction of correct argmax predictions in infer mode."""
    n = image_set.n
    if n == 0:
        return 0.0
    correct = 0
    for start in range(0, n, batch_size):
        chunk = image_set.images[start : start + batch_size]
        x = (chunk.astype(model.dtype) / 255.0).reshape(-1, 1, 28, 28)
        logits = model.forward(x, train=False)
        correct += int((logits.argmax(axis=1) == image_set.labels[start : start + batch_size]).sum())
    return correct / n
