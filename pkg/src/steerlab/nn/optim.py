"""Bias-corrected ADAM over a network's parameter list."""

from __future__ import annotations

import numpy as np

from .network import Network

__all__ = ["AdamState", "adam_step"]


class AdamState:
    """Moment estimates and hyperparameters for one network's parameters."""

    def __init__(self, net: Network, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8) -> None:
        if min(lr, beta1, beta2, epsilon) <= 0:
            raise ValueError("ADAM hyperparameters must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p) for p in net.parameters()]
        self.second_moment = [np.zeros_like(p) for p in net.parameters()]


def adam_step(net: Network, state: AdamState) -> None:
    """Apply one bias-corrected ADAM update and zero the gradients."""
    params = net.parameters()
    grads = net.gradients()
    if len(params) != len(state.first_moment):
        raise ValueError("optimizer state does not match network parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    net.zero_grads()
