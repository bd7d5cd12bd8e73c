"""CNN building blocks with explicit forward/backward passes on numpy arrays.

All layers run in float32 by default; passing dtype=float64 at construction
puts them in gradient-check mode. Activations flow as (N, C, H, W) until
Flatten, then as (N, D).
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DegenerateBatchError, ShapeError, StateError


class Layer:
    """Common surface: params/grads dicts plus forward/backward."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2d(Layer):
    """3x3 cross-correlation with zero padding that preserves H and W."""

    KERNEL = 3

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        k = self.KERNEL
        # small uniform init converges fastest at tiny step budgets with BN
        bound = 1.0 / np.sqrt(in_channels * k * k)
        self.params["w"] = rng.uniform(-bound, bound, (out_channels, in_channels, k, k)).astype(dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self._xpad = None

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv expects (N,{self.in_channels},H,W), got {x.shape}"
            )
        n, _, h, w = x.shape
        xpad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        wgt = self.params["w"]
        # accumulate in (F, N, H, W) so each kernel tap is one BLAS contraction
        out = np.zeros((self.out_channels, n, h, w), dtype=x.dtype)
        for ki in range(self.KERNEL):
            for kj in range(self.KERNEL):
                sl = xpad[:, :, ki : ki + h, kj : kj + w]
                out += np.tensordot(wgt[:, :, ki, kj], sl, axes=([1], [1]))
        out = out.transpose(1, 0, 2, 3) + self.params["b"][None, :, None, None]
        self._xpad = xpad
        return np.ascontiguousarray(out)

    def backward(self, dout):
        if self._xpad is None:
            raise StateError("conv backward called before forward")
        xpad = self._xpad
        n, _, h, w = dout.shape
        wgt = self.params["w"]
        dw = np.zeros_like(wgt)
        dxpad = np.zeros_like(xpad)
        for ki in range(self.KERNEL):
            for kj in range(self.KERNEL):
                sl = xpad[:, :, ki : ki + h, kj : kj + w]
                dw[:, :, ki, kj] = np.tensordot(dout, sl, axes=([0, 2, 3], [0, 2, 3]))
                t = np.tensordot(dout, wgt[:, :, ki, kj], axes=([1], [0]))  # (N,H,W,C)
                dxpad[:, :, ki : ki + h, kj : kj + w] += t.transpose(0, 3, 1, 2)
        self.grads["w"] = dw
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(dxpad[:, :, 1 : h + 1, 1 : w + 1])


class BatchNorm2d(Layer):
    """Per-channel normalization over batch x H x W; running stats for inference."""

    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects (N,{self.channels},H,W), got {x.shape}")
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if train:
            if x.shape[0] < 2:
                raise DegenerateBatchError("batchnorm train mode needs batch >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(x.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(x.dtype)
            self._cache = (xhat, inv_std)
            return gamma * xhat + beta
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = None
        return gamma * xhat + beta

    def backward(self, dout):
        if self._cache is None:
            raise StateError("batchnorm backward needs a train-mode forward cache")
        xhat, inv_std = self._cache
        m = float(dout.shape[0] * dout.shape[2] * dout.shape[3])
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.params["gamma"][None, :, None, None]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv_std[None, :, None, None] / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx.astype(dout.dtype)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, train):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            raise StateError("relu backward called before forward")
        return dout * self._mask


class MaxPool2d(Layer):
    """2x2 window, stride 2; remembers the argmax for gradient routing."""

    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x, train):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool needs even spatial dims, got {h}x{w}")
        h2, w2 = h // 2, w // 2
        windows = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        arg = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("maxpool backward called before forward")
        (n, c, h, w), arg = self._cache
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        return (
            dwin.reshape(n, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )


class Dropout(Layer):
    """Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate)."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate
        self.rng = rng
        self.mask = None
        self._train = False

    def forward(self, x, train, freeze_mask=False):
        self._train = train
        if not train or self.rate == 0.0:
            self.mask = None
            return x
        if not (freeze_mask and self.mask is not None and self.mask.shape == x.shape):
            self.mask = self.rng.random(x.shape) >= self.rate
        return x * self.mask / (1.0 - self.rate)

    def backward(self, dout):
        if not self._train or self.rate == 0.0:
            return dout
        if self.mask is None:
            raise StateError("dropout backward called before forward")
        return dout * self.mask / (1.0 - self.rate)


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        if self._shape is None:
            raise StateError("flatten backward called before forward")
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        bound = 1.0 / np.sqrt(d_in)
        self.params["w"] = rng.uniform(-bound, bound, (d_in, d_out)).astype(dtype)
        self.params["b"] = np.zeros(d_out, dtype=dtype)
        self._x = None

    def forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"dense expects (N,{self.d_in}), got {x.shape}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        if self._x is None:
            raise StateError("dense backward called before forward")
        self.grads["w"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"].T
