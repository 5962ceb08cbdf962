"""Finite-difference verification of analytic gradients.

The check clones the network to 64-bit precision, so it is meaningful only
for nets small enough to perturb every parameter (test-scale nets).
"""

from __future__ import annotations

import numpy as np

from . import losses
from .layers import Dropout
from .network import Network

__all__ = ["grad_check"]


def _loss_fns(loss_spec: tuple[str, np.ndarray]):
    name, labels = loss_spec
    labels = np.asarray(labels)
    if name == "nll":
        return (lambda out: losses.nll_loss(out, labels),
                lambda out: losses.nll_loss_grad(out, labels))
    if name == "mse":
        return (lambda out: losses.mse_loss(out, labels),
                lambda out: losses.mse_loss_grad(out, labels))
    raise ValueError(f"unknown loss {name!r}; expected 'nll' or 'mse'")


def grad_check(net: Network, x: np.ndarray, loss_spec: tuple[str, np.ndarray],
               h: float = 1e-3, train: bool | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-8).  The original network is untouched.
    """
    loss_fn, grad_fn = _loss_fns(loss_spec)
    net64 = net.astype(np.float64)
    is_train = net.mode == "train" if train is None else train
    x64 = np.asarray(x, dtype=np.float64)
    if is_train:
        # dropout masks must not resample between perturbed evaluations
        for layer in net64.layers:
            if isinstance(layer, Dropout):
                layer.freeze_mask = True

    def loss_at() -> float:
        return loss_fn(net64.forward(x64, train=is_train))

    out = net64.forward(x64, train=is_train)
    net64.zero_grads()
    net64.backward(grad_fn(out))
    analytic = [g.copy() for g in net64.gradients()]

    worst = 0.0
    for p, g in zip(net64.parameters(), analytic):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            keep = flat_p[i]
            flat_p[i] = keep + h
            up = loss_at()
            flat_p[i] = keep - h
            down = loss_at()
            flat_p[i] = keep
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(flat_g[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(flat_g[i] - numeric) / denom)
    return worst
