"""Sequential network container: shape validation, modes, forward/backward."""

from __future__ import annotations

import copy

import numpy as np

from .layers import Conv, Dense, Dropout, Layer, LayerError, MaxPool, ReLU, Softmax, Tanh

__all__ = ["Network", "build_network", "layer_from_spec"]

_LAYER_BUILDERS = {
    "conv": lambda s: Conv(int(s["out_channels"]), int(s["kernel_h"]), int(s["kernel_w"])),
    "maxpool": lambda s: MaxPool(),
    "dense": lambda s: Dense(int(s["out_units"])),
    "relu": lambda s: ReLU(),
    "tanh": lambda s: Tanh(),
    "softmax": lambda s: Softmax(),
    "dropout": lambda s: Dropout(float(s["rate"])),
}


def layer_from_spec(spec: dict) -> Layer:
    kind = spec["kind"]
    if kind not in _LAYER_BUILDERS:
        raise LayerError(f"unknown layer kind {kind!r}")
    return _LAYER_BUILDERS[kind](spec)


def _layer_spec(layer: Layer) -> dict:
    if isinstance(layer, Conv):
        return {"kind": "conv", "out_channels": layer.out_channels,
                "kernel_h": layer.kernel_h, "kernel_w": layer.kernel_w}
    if isinstance(layer, Dense):
        return {"kind": "dense", "out_units": layer.out_units}
    if isinstance(layer, Dropout):
        return {"kind": "dropout", "rate": layer.rate}
    return {"kind": layer.kind}


class Network:
    """Ordered layer stack with train/eval mode and a private RNG.

    The public tensor convention is channels-first: per-sample input shapes
    are ``(C, H, W)`` for images or ``(D,)`` for flat vectors.  Internally
    image activations are channels-last; :meth:`forward` converts on entry.
    Hot paths may call :meth:`forward_internal` with channels-last batches
    to skip the conversion.

    A network is not internally synchronized: it must be mutated by one
    caller at a time.  Frozen clones may serve reads concurrently.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...],
                 seed: int = 0, dtype=np.float32) -> None:
        self.layers = layers
        self.input_shape = tuple(int(e) for e in input_shape)
        self.rng_seed = seed
        self.dtype = np.dtype(dtype)
        self.mode = "eval"
        self._rng = np.random.default_rng(seed)
        self._forward_done = False
        shape = self._internal_input_shape()
        for i, layer in enumerate(self.layers):
            layer.name = f"{layer.name}#{i}"
            shape = layer.build(shape, self._rng, self.dtype)
        self.output_shape = shape

    def _internal_input_shape(self) -> tuple[int, ...]:
        if len(self.input_shape) == 3:
            c, h, w = self.input_shape
            return (h, w, c)
        return self.input_shape

    # -- modes ---------------------------------------------------------

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    # -- forward / backward --------------------------------------------

    def forward(self, x: np.ndarray, train: bool | None = None) -> np.ndarray:
        """Run the stack on a channels-first batch ``(B,) + input_shape``."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise LayerError(
                f"network input shape {x.shape[1:]} does not match configured "
                f"{self.input_shape}")
        if len(self.input_shape) == 3:
            x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        out = self.forward_internal(x, train=train)
        if out.ndim == 4:
            out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        return out

    def forward_internal(self, x: np.ndarray, train: bool | None = None) -> np.ndarray:
        """Run the stack on an internal-layout batch (channels-last images)."""
        is_train = self.mode == "train" if train is None else train
        if x.shape[1:] != self._internal_input_shape():
            raise LayerError(
                f"network input shape {x.shape[1:]} does not match configured "
                f"{self._internal_input_shape()} (internal layout)")
        out = x if x.dtype == self.dtype else x.astype(self.dtype)
        for layer in self.layers:
            out = layer.forward(out, is_train, self._rng)
        self._forward_done = True
        self._last_mode_was_train = is_train
        return out

    def backward(self, loss_grad: np.ndarray, need_input_grad: bool = False
                 ) -> np.ndarray | None:
        """Backpropagate an upstream gradient, accumulating parameter grads.

        Requires a preceding forward in the same mode; layer caches from that
        forward (including dropout masks) are consumed here.
        """
        if not self._forward_done:
            raise LayerError("backward called without a preceding forward")
        grad = np.asarray(loss_grad, dtype=self.dtype)
        for i, layer in enumerate(reversed(self.layers)):
            last = i == len(self.layers) - 1
            grad = layer.backward(grad, need_input_grad=need_input_grad or not last)
        self._forward_done = False
        if not need_input_grad:
            return None
        if len(self.input_shape) == 3 and grad is not None and grad.ndim == 4:
            grad = np.ascontiguousarray(grad.transpose(0, 3, 1, 2))
        return grad

    # -- parameters ------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def set_parameters(self, params: list[np.ndarray]) -> None:
        own = self.parameters()
        if len(own) != len(params):
            raise LayerError(f"expected {len(own)} parameter tensors, got {len(params)}")
        for dst, src in zip(own, params):
            if dst.shape != src.shape:
                raise LayerError(f"parameter shape {src.shape} != expected {dst.shape}")
            dst[...] = src

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    # -- structure ------------------------------------------------------

    def spec(self) -> list[dict]:
        return [_layer_spec(layer) for layer in self.layers]

    def clone(self, seed: int | None = None) -> "Network":
        """Same architecture and parameters; fresh caches and RNG."""
        net = build_network(self.spec(), self.input_shape,
                            seed=self.rng_seed if seed is None else seed,
                            dtype=self.dtype)
        net.set_parameters(self.parameters())
        net.mode = self.mode
        return net

    def astype(self, dtype) -> "Network":
        net = build_network(self.spec(), self.input_shape, seed=self.rng_seed,
                            dtype=dtype)
        net.set_parameters([p.astype(dtype) for p in self.parameters()])
        net.mode = self.mode
        return net

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        inner = " -> ".join(layer.name for layer in self.layers)
        return f"Network({self.input_shape} -> {inner})"


def build_network(layer_specs: list[dict], input_shape: tuple[int, ...],
                  seed: int = 0, dtype=np.float32) -> Network:
    layers = [layer_from_spec(copy.deepcopy(s)) for s in layer_specs]
    return Network(layers, input_shape, seed=seed, dtype=dtype)
