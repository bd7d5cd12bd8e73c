"""Softmax cross-entropy head, stabilized by max subtraction."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError

NUM_CLASSES = 10


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean batch loss and d(loss)/d(logits) = (softmax - onehot) / batch."""
    if logits.ndim != 2 or logits.shape[1] != NUM_CLASSES:
        raise ShapeError(f"logits must be (N,{NUM_CLASSES}), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels must be ({logits.shape[0]},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise ShapeError("labels outside 0..9")

    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad
