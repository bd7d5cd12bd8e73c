"""The feature-extractor CNN: three conv blocks, then a 128-wide embedding layer.

Architecture (28x28 grayscale in, 10 logits out):
  Conv3x3x32 -> BN -> ReLU -> MaxPool2 -> Dropout .25
  Conv3x3x64 -> BN -> ReLU -> MaxPool2 -> Dropout .25
  Conv3x3x128 -> BN -> ReLU -> Dropout .4
  Flatten -> Dense 128 -> ReLU -> Dropout .3 -> Dense 10

The embedding is the Dense-128 activation after ReLU, read with the
classifier head cut off and every stochastic layer disabled.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptionError, ModeError, VersionError
from .layers import BatchNorm2d, Conv2d, Dense, Dropout, Flatten, MaxPool2d, ReLU

FEATURE_DIM = 128
CHECKPOINT_MAGIC = b"FAIRCNN1"
CHECKPOINT_VERSION = 1
DEFAULT_DROPOUT = (0.25, 0.25, 0.4, 0.3)


class CnnModel:
    def __init__(self, seed: int = 0, dtype=np.float32, dropout_rates=DEFAULT_DROPOUT):
        self.seed = seed
        self.dtype = np.dtype(dtype).type
        self.dropout_rates = tuple(dropout_rates)
        self.mode = "train"
        rng = np.random.default_rng(seed)
        self._rng = rng
        d1, d2, d3, d4 = self.dropout_rates
        self.layers = [
            Conv2d(1, 32, rng, dtype),
            BatchNorm2d(32, dtype),
            ReLU(),
            MaxPool2d(),
            Dropout(d1, rng),
            Conv2d(32, 64, rng, dtype),
            BatchNorm2d(64, dtype),
            ReLU(),
            MaxPool2d(),
            Dropout(d2, rng),
            Conv2d(64, 128, rng, dtype),
            BatchNorm2d(128, dtype),
            ReLU(),
            Dropout(d3, rng),
            Flatten(),
            Dense(128 * 7 * 7, FEATURE_DIM, rng, dtype),
            ReLU(),
            Dropout(d4, rng),
            Dense(FEATURE_DIM, 10, rng, dtype),
        ]
        # embedding = output of the ReLU that follows the Dense-128 layer
        self.feature_index = 16

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self):
        """Yield (layer, param name) for every trainable array, in layer order."""
        for layer in self.layers:
            for name in sorted(layer.params):
                yield layer, name

    def feature_forward(self, x: np.ndarray) -> np.ndarray:
        """Inference pass through the retained layers only (up to the embedding)."""
        for layer in self.layers[: self.feature_index + 1]:
            x = layer.forward(x, False)
        return x


def extract_features(model: CnnModel, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Embed images (N,28,28 uint8) as (N,128) float32 penultimate activations."""
    if model.mode == "train":
        raise ModeError("model is in train mode; finish training before extracting features")
    n = images.shape[0]
    out = np.zeros((n, FEATURE_DIM), dtype=np.float32)
    for start in range(0, n, batch_size):
        chunk = images[start : start + batch_size]
        x = (chunk.astype(model.dtype) / 255.0).reshape(-1, 1, 28, 28)
        out[start : start + chunk.shape[0]] = model.feature_forward(x).astype(np.float32)
    return out


def save_model(model: CnnModel, path) -> None:
    """Checkpoint: magic, version, JSON layer descriptors, LE float32 arrays."""
    descr = {
        "seed": model.seed,
        "dropout_rates": list(model.dropout_rates),
        "mode": model.mode,
        "feature_index": model.feature_index,
        "layers": [type(l).__name__ for l in model.layers],
    }
    blobs = []
    for layer in model.layers:
        for name in sorted(layer.params):
            blobs.append(np.ascontiguousarray(layer.params[name], dtype="<f4").tobytes())
        if isinstance(layer, BatchNorm2d):
            blobs.append(np.ascontiguousarray(layer.running_mean, dtype="<f4").tobytes())
            blobs.append(np.ascontiguousarray(layer.running_var, dtype="<f4").tobytes())
    descr_bytes = json.dumps(descr, sort_keys=True).encode()
    header = CHECKPOINT_MAGIC + struct.pack("<QI", CHECKPOINT_VERSION, len(descr_bytes))
    Path(path).write_bytes(header + descr_bytes + b"".join(blobs))


def load_model(path) -> CnnModel:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise CorruptionError("checkpoint lacks magic")
    version, descr_len = struct.unpack("<QI", buf[8:20])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version}")
    descr = json.loads(buf[20 : 20 + descr_len])
    model = CnnModel(seed=descr["seed"], dropout_rates=tuple(descr["dropout_rates"]))
    if descr["layers"] != [type(l).__name__ for l in model.layers]:
        raise CorruptionError("checkpoint layer list does not match this architecture")
    offset = 20 + descr_len

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        return arr.astype(np.float32)

    for layer in model.layers:
        for name in sorted(layer.params):
            layer.params[name] = take(layer.params[name].shape)
        if isinstance(layer, BatchNorm2d):
            layer.running_mean = take(layer.running_mean.shape)
            layer.running_var = take(layer.running_var.shape)
    if offset != len(buf):
        raise CorruptionError(f"checkpoint has {len(buf) - offset} trailing bytes")
    model.mode = descr["mode"]
    model.feature_index = descr["feature_index"]
    return model
