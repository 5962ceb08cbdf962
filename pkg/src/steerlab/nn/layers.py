"""Layer implementations for the minimal differentiable-network stack.

Seven layer kinds are supported: Conv, MaxPool, Dense, ReLU, Tanh, Softmax
and Dropout.  Image activations flow through the stack channels-last
(batch, height, width, channels); the Network front-end converts from the
public channels-first convention once per call.

Convolutions are stride-1 with "same" zero padding and are evaluated as an
accumulation of one matmul per kernel offset, which on CPU beats an
explicit im2col by a wide margin (no large gather copy).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Layer",
    "Conv",
    "MaxPool",
    "Dense",
    "ReLU",
    "Tanh",
    "Softmax",
    "Dropout",
    "LayerError",
]


class LayerError(ValueError):
    """Raised for shape mismatches and misuse, naming the offending layer."""


def _pad_split(k: int) -> tuple[int, int]:
    # "same" padding for stride 1: total k-1, front-loaded low side
    before = (k - 1) // 2
    return before, k - 1 - before


class Layer:
    """Base layer: parameters, matching gradients, forward/backward."""

    kind: str = "base"

    def __init__(self) -> None:
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []
        self.name = self.kind

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator,
              dtype: np.dtype) -> tuple[int, ...]:
        """Allocate parameters for the given per-sample input shape."""
        return self.out_shape(in_shape)

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def zero_grads(self) -> None:
        for g in self.grads:
            g[...] = 0

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return self.name


class Conv(Layer):
    """2D convolution, stride 1, "same" zero padding, channels-last."""

    kind = "conv"

    def __init__(self, out_channels: int, kernel_h: int, kernel_w: int) -> None:
        super().__init__()
        self.out_channels = out_channels
        self.kernel_h = kernel_h
        self.kernel_w = kernel_w
        self.name = f"conv{out_channels}x{kernel_h}x{kernel_w}"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise LayerError(f"{self.name}: expected (H, W, C) input, got {in_shape}")
        h, w, _ = in_shape
        return (h, w, self.out_channels)

    def build(self, in_shape, rng, dtype):
        h, w, c = in_shape
        fan_in = c * self.kernel_h * self.kernel_w
        limit = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-limit, limit,
                             size=(self.kernel_h, self.kernel_w, c, self.out_channels))
        self.params = [weight.astype(dtype), np.zeros(self.out_channels, dtype)]
        self.grads = [np.zeros_like(p) for p in self.params]
        return self.out_shape(in_shape)

    def _padded(self, x: np.ndarray) -> np.ndarray:
        b, h, w, c = x.shape
        pt, pb = _pad_split(self.kernel_h)
        pl, pr = _pad_split(self.kernel_w)
        xp = np.zeros((b, h + pt + pb, w + pl + pr, c), dtype=x.dtype)
        xp[:, pt:pt + h, pl:pl + w, :] = x
        return xp

    def forward(self, x, train, rng):
        if x.ndim != 4 or x.shape[3] != self.params[0].shape[2]:
            raise LayerError(
                f"{self.name}: input shape {x.shape[1:]} does not match "
                f"expected channels {self.params[0].shape[2]}")
        weight, bias = self.params
        b, h, w, _ = x.shape
        xp = self._padded(x)
        out = np.empty((b, h, w, self.out_channels), dtype=x.dtype)
        out[:] = bias
        for ky in range(self.kernel_h):
            for kx in range(self.kernel_w):
                np.add(out, xp[:, ky:ky + h, kx:kx + w, :] @ weight[ky, kx], out=out)
        self._cache = (xp, x.shape)
        return out

    def backward(self, dout, need_input_grad=True):
        xp, x_shape = self._cache
        weight, _ = self.params
        b, h, w, c = x_shape
        dflat = dout.reshape(-1, self.out_channels)
        dw, db = self.grads
        dxp = np.zeros_like(xp) if need_input_grad else None
        for ky in range(self.kernel_h):
            for kx in range(self.kernel_w):
                xs = xp[:, ky:ky + h, kx:kx + w, :].reshape(-1, c)
                dw[ky, kx] += xs.T @ dflat
                if need_input_grad:
                    dxp[:, ky:ky + h, kx:kx + w, :] += (
                        dflat @ weight[ky, kx].T).reshape(b, h, w, c)
        db += dflat.sum(axis=0)
        if not need_input_grad:
            return None
        pt, _ = _pad_split(self.kernel_h)
        pl, _ = _pad_split(self.kernel_w)
        return dxp[:, pt:pt + h, pl:pl + w, :]


class MaxPool(Layer):
    """2x2 max pooling with stride 2; gradient routes to the first maximum."""

    kind = "maxpool"

    def __init__(self) -> None:
        super().__init__()
        self.name = "maxpool2x2"

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if h % 2 or w % 2:
            raise LayerError(f"{self.name}: spatial extents {h}x{w} not divisible by 2")
        return (h // 2, w // 2, c)

    def forward(self, x, train, rng):
        if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
            raise LayerError(f"{self.name}: cannot pool input of shape {x.shape[1:]}")
        a = np.maximum(x[:, 0::2], x[:, 1::2])
        out = np.maximum(a[:, :, 0::2], a[:, :, 1::2])
        self._cache = (x, out)
        return out

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        x, out = self._cache
        dx = np.zeros_like(x)
        taken = np.zeros(out.shape, dtype=bool)
        # window cells visited in row-major order so ties route to the first max
        for iy in (0, 1):
            for ix in (0, 1):
                cell = x[:, iy::2, ix::2]
                hit = (cell == out) & ~taken
                dx[:, iy::2, ix::2] = np.where(hit, dout, 0)
                taken |= hit
        return dx


class Dense(Layer):
    """Fully connected layer; flattens any trailing input dimensions."""

    kind = "dense"

    def __init__(self, out_units: int) -> None:
        super().__init__()
        self.out_units = out_units
        self.name = f"dense{out_units}"

    def out_shape(self, in_shape):
        return (self.out_units,)

    def build(self, in_shape, rng, dtype):
        fan_in = int(np.prod(in_shape))
        limit = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-limit, limit, size=(fan_in, self.out_units))
        self.params = [weight.astype(dtype), np.zeros(self.out_units, dtype)]
        self.grads = [np.zeros_like(p) for p in self.params]
        return (self.out_units,)

    def forward(self, x, train, rng):
        weight, bias = self.params
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != weight.shape[0]:
            raise LayerError(
                f"{self.name}: input of {flat.shape[1]} features does not match "
                f"weight expecting {weight.shape[0]}")
        self._cache = (flat, x.shape)
        return flat @ weight + bias

    def backward(self, dout, need_input_grad=True):
        flat, x_shape = self._cache
        weight, _ = self.params
        self.grads[0] += flat.T @ dout
        self.grads[1] += dout.sum(axis=0)
        if not need_input_grad:
            return None
        return (dout @ weight.T).reshape(x_shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train, rng):
        out = np.maximum(x, 0)
        self._cache = x > 0
        return out

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        return np.where(self._cache, dout, 0)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, train, rng):
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        y = self._cache
        return dout * (1.0 - y * y)


class Softmax(Layer):
    """Row-wise softmax over the last axis."""

    kind = "softmax"

    def forward(self, x, train, rng):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        self._cache = out
        return out

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        p = self._cache
        inner = (dout * p).sum(axis=-1, keepdims=True)
        return p * (dout - inner)


class Dropout(Layer):
    """Inverted dropout: identity in eval mode, mask/(1-rate) in train mode."""

    kind = "dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise LayerError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.name = f"dropout{rate:g}"
        self._mask: np.ndarray | None = None
        self.freeze_mask = False  # reuse last mask (gradient-check support)

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if not (self.freeze_mask and self._mask is not None
                and self._mask.shape == x.shape):
            self._mask = (rng.random(x.shape) >= self.rate)
        return x * self._mask / (1.0 - self.rate)

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        if self._mask is None:
            return dout
        return dout * self._mask / (1.0 - self.rate)
