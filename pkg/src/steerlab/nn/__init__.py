"""Minimal differentiable-network stack: layers, losses, ADAM, checkpoints."""

from .layers import Conv, Dense, Dropout, Layer, LayerError, MaxPool, ReLU, Softmax, Tanh
from .losses import LossDiagnostics, mse_loss, mse_loss_grad, nll_loss, nll_loss_grad
from .network import Network, build_network
from .optim import AdamState, adam_step
from .gradcheck import grad_check
from .checkpoint import CheckpointError, load_checkpoint_into, save_checkpoint

__all__ = [
    "Conv", "Dense", "Dropout", "Layer", "LayerError", "MaxPool", "ReLU",
    "Softmax", "Tanh", "Network", "build_network", "AdamState", "adam_step",
    "grad_check", "nll_loss", "nll_loss_grad", "mse_loss", "mse_loss_grad",
    "LossDiagnostics", "save_checkpoint", "load_checkpoint_into", "CheckpointError",
]
