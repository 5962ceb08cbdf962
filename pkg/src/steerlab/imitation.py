"""Supervised imitation: train the policy network from demonstrations.

The policy maps a 6-channel observation to three action probabilities.
Its convolutional trunk (through the fourth pooling stage) is the shared
representation reused to initialize the reward, safety and Q networks.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .data import DemoDataset, LabeledDataset
from .sim import FrameRing, RenderConfig, SimConfig, Track, World
from .training import FitConfig, TrainingCurve, fit

__all__ = ["policy_layer_specs", "build_policy_net", "TRUNK_LAYER_COUNT",
           "trunk_parameter_count", "copy_trunk", "split_dataset", "train_policy",
           "act", "act_hwc", "evaluate_policy", "PolicyDriver"]

# Conv trunk: four conv+relu+pool blocks (indices 0..11); everything after
# is the task head.  All sibling networks share this boundary.
TRUNK_LAYER_COUNT = 12


def policy_layer_specs(dropout: float = 0.5) -> list[dict]:
    return [
        {"kind": "conv", "out_channels": 6, "kernel_h": 4, "kernel_w": 4},
        {"kind": "relu"},
        {"kind": "maxpool"},
        {"kind": "conv", "out_channels": 8, "kernel_h": 4, "kernel_w": 4},
        {"kind": "relu"},
        {"kind": "maxpool"},
        {"kind": "conv", "out_channels": 16, "kernel_h": 4, "kernel_w": 4},
        {"kind": "relu"},
        {"kind": "maxpool"},
        {"kind": "conv", "out_channels": 16, "kernel_h": 4, "kernel_w": 4},
        {"kind": "relu"},
        {"kind": "maxpool"},
        {"kind": "dense", "out_units": 100},
        {"kind": "relu"},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "out_units": 3},
        {"kind": "softmax"},
    ]


def build_policy_net(input_shape: tuple[int, int, int] = (6, 48, 64),
                     seed: int = 0, dropout: float = 0.5) -> nn.Network:
    return nn.build_network(policy_layer_specs(dropout), input_shape, seed=seed)


def trunk_parameter_count(net: nn.Network) -> int:
    return sum(len(layer.params) for layer in net.layers[:TRUNK_LAYER_COUNT])


def copy_trunk(src: nn.Network, dst: nn.Network) -> None:
    """Copy the shared conv-trunk parameters between sibling networks."""
    for a, b in zip(src.layers[:TRUNK_LAYER_COUNT], dst.layers[:TRUNK_LAYER_COUNT]):
        if a.kind != b.kind:
            raise nn.LayerError(f"trunk mismatch: {a.name} vs {b.name}")
        for pa, pb in zip(a.params, b.params):
            pb[...] = pa


def split_dataset(ds, seed: int = 0, train_fraction: float = 0.8):
    """Disjoint shuffled train/validation split, proportions exact to rounding."""
    n = len(ds)
    if n < 10:
        raise ValueError(f"dataset of {n} records is too small to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return ds.select(perm[:n_train]), ds.select(perm[n_train:])


def train_policy(train_ds: DemoDataset, val_ds: DemoDataset,
                 cfg: FitConfig = FitConfig(),
                 input_shape: tuple[int, int, int] | None = None,
                 dropout: float = 0.5) -> tuple[nn.Network, TrainingCurve]:
    """Minibatch ADAM on the NLL objective with validation early stopping."""
    h, w = train_ds.frame_shape
    shape = input_shape or (6, h, w)
    net = build_policy_net(shape, seed=cfg.seed, dropout=dropout)
    curve = fit(net, train_ds, val_ds, cfg, task="classify")
    return net, curve


def act(net: nn.Network, obs: np.ndarray) -> int:
    """Greedy action for one channels-first observation (ties to lowest index)."""
    if obs.shape != net.input_shape:
        raise nn.LayerError(f"observation shape {obs.shape} does not match "
                            f"policy input {net.input_shape}")
    out = net.forward(obs[None], train=False)[0]
    return int(np.argmax(out))


def act_hwc(net: nn.Network, obs_hwc: np.ndarray) -> int:
    """Greedy action for a channels-last float observation (hot path)."""
    out = net.forward_internal(obs_hwc[None], train=False)[0]
    return int(np.argmax(out))


class PolicyDriver:
    """Closed-loop driver over observations only (never the world probe)."""

    def __init__(self, net: nn.Network) -> None:
        self.net = net

    def act(self, world: World, obs_hwc_u8: np.ndarray, rng: np.random.Generator) -> int:
        return act_hwc(self.net, obs_hwc_u8.astype(np.float32) / 255.0)


def evaluate_policy(actor: nn.Network, track: Track, reward_net: nn.Network,
                    ticks: int, sim_cfg: SimConfig = SimConfig(),
                    render_cfg: RenderConfig = RenderConfig()) -> float:
    """Mean reward-net output over the observations a closed-loop drive visits.

    Works for the softmax policy and for Q networks alike: the greedy action
    is the argmax either way.  Restarts are handled by the world itself.
    """
    if ticks < 1:
        raise ValueError("ticks must be >= 1")
    world = World(track, sim_cfg)
    ring = FrameRing(render_cfg)
    ring.push_world(world)
    total = 0.0
    for _ in range(ticks):
        obs = ring.observation_hwc_u8().astype(np.float32) / 255.0
        a = act_hwc(actor, obs)
        world.step(a)
        ring.push_world(world)
        nxt = ring.observation_hwc_u8().astype(np.float32) / 255.0
        total += float(reward_net.forward_internal(nxt[None], train=False)[0, 0])
    return total / ticks
