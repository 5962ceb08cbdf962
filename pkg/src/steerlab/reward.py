"""Reward induction: a tanh-headed scorer trained on +/-1 instructor labels."""

from __future__ import annotations

import numpy as np

from . import nn
from .data import DatasetError, LabeledDataset
from .imitation import copy_trunk, policy_layer_specs
from .training import FitConfig, TrainingCurve, fit

__all__ = ["scorer_layer_specs", "build_reward_net", "train_reward", "reward_of",
           "sign_accuracy", "subsample"]


def scorer_layer_specs(dropout: float = 0.5) -> list[dict]:
    """Policy topology with the final layer swapped for a tanh scalar head."""
    specs = policy_layer_specs(dropout)[:-2]
    specs.append({"kind": "dense", "out_units": 1})
    specs.append({"kind": "tanh"})
    return specs


def build_reward_net(input_shape: tuple[int, int, int] = (6, 48, 64),
                     seed: int = 0, dropout: float = 0.5) -> nn.Network:
    return nn.build_network(scorer_layer_specs(dropout), input_shape, seed=seed)


def _check_two_classes(ds: LabeledDataset, what: str) -> None:
    classes = set(np.unique(ds.targets))
    if classes != {-1, 1}:
        raise DatasetError(f"{what} data has a single label class {classes}; "
                           f"untrainable")


def train_reward(train_ds: LabeledDataset, val_ds: LabeledDataset,
                 cfg: FitConfig = FitConfig(), init: str | nn.Network = "fresh",
                 dropout: float = 0.5) -> tuple[nn.Network, TrainingCurve]:
    """ADAM on the MSE objective; early stopping on validation sign-accuracy.

    ``init`` is either "fresh" or a trained policy network whose conv trunk
    seeds this net's representation.
    """
    _check_two_classes(train_ds, "training")
    h, w = train_ds.frame_shape
    net = build_reward_net((6, h, w), seed=cfg.seed, dropout=dropout)
    if isinstance(init, nn.Network):
        copy_trunk(init, net)
    elif init != "fresh":
        raise ValueError(f"init must be 'fresh' or a policy network, got {init!r}")
    curve = fit(net, train_ds, val_ds, cfg, task="score")
    return net, curve


def reward_of(net: nn.Network, obs: np.ndarray) -> float:
    """Instantaneous reward of one channels-first observation."""
    if obs.shape != net.input_shape:
        raise nn.LayerError(f"observation shape {obs.shape} does not match "
                            f"reward input {net.input_shape}")
    return float(net.forward(obs[None], train=False)[0, 0])


def sign_accuracy(net: nn.Network, ds: LabeledDataset, batch: int = 256) -> float:
    """Fraction of records whose reward sign matches the label (0 counts as -1)."""
    from .data import observation_batch_hwc

    n = len(ds)
    targets = ds.targets
    correct = 0
    for lo in range(0, n, batch):
        idx = np.arange(lo, min(lo + batch, n))
        out = net.forward_internal(observation_batch_hwc(ds, idx), train=False)[:, 0]
        signs = np.where(out > 0, 1, -1)
        correct += int((signs == targets[idx]).sum())
    return correct / n


def subsample(ds: LabeledDataset, fraction: float, seed: int = 0) -> LabeledDataset:
    """Uniform without-replacement subsample preserving record order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(ds)
    k = int(round(fraction * n))
    if k >= n:
        return ds.select(np.arange(n))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    out = ds.select(idx)
    _check_two_classes(out, "subsampled")
    return out
