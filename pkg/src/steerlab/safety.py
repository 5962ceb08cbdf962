"""Safety module: risk scorer + threshold + safe fallback policy.

The two-case control rule hands the car to the fallback policy whenever
the safety score is at or below the threshold (ties resolve conservatively
to the fallback), and returns control only after the score has stayed on
the agent's side for a hysteresis window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledDataset
from .imitation import act_hwc
from .reward import build_reward_net, train_reward
from .sim import FrameRing, World
from .training import FitConfig, TrainingCurve

__all__ = ["build_safety_net", "train_safety", "SafetyModule", "AGENT_CONTROL",
           "SAFE_CONTROL", "gate", "safe_takeover"]

AGENT_CONTROL = "agent"
SAFE_CONTROL = "safe"


def build_safety_net(input_shape: tuple[int, int, int] = (6, 48, 64),
                     seed: int = 0, dropout: float = 0.5) -> nn.Network:
    return build_reward_net(input_shape, seed=seed, dropout=dropout)


def train_safety(train_ds: LabeledDataset, val_ds: LabeledDataset,
                 cfg: FitConfig = FitConfig(), init: str | nn.Network = "fresh",
                 dropout: float = 0.5) -> tuple[nn.Network, TrainingCurve]:
    """Same trainer and contract as the reward net, different data/labeling."""
    return train_reward(train_ds, val_ds, cfg, init=init, dropout=dropout)


@dataclass
class SafetyModule:
    net: nn.Network
    safe_policy: nn.Network
    threshold: float = 0.0
    hysteresis_ticks: int = 3
    max_takeover_ticks: int = 300

    def __post_init__(self) -> None:
        if not -1.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly inside (-1, 1)")

    def score_hwc(self, obs_hwc: np.ndarray) -> float:
        return float(self.net.forward_internal(obs_hwc[None], train=False)[0, 0])


def gate(module: SafetyModule, obs: np.ndarray) -> str:
    """Two-case rule on a channels-first observation; tie goes to SAFE_CONTROL."""
    score = float(module.net.forward(obs[None], train=False)[0, 0])
    return SAFE_CONTROL if score <= module.threshold else AGENT_CONTROL


def gate_hwc(module: SafetyModule, obs_hwc: np.ndarray) -> str:
    return SAFE_CONTROL if module.score_hwc(obs_hwc) <= module.threshold \
        else AGENT_CONTROL


def safe_takeover(module: SafetyModule, world: World, ring: FrameRing,
                  max_ticks: int | None = None) -> tuple[int, bool]:
    """Drive with the fallback policy until the state reads safe, with hysteresis.

    Control returns after the gate has said agent-side for hysteresis_ticks
    consecutive ticks beyond the tick on which it first flipped.  Returns
    (ticks_used, timed_out); on timeout the world is force-restarted.
    """
    limit = module.max_takeover_ticks if max_ticks is None else max_ticks
    streak = 0
    for tick in range(1, limit + 1):
        obs = ring.observation_hwc_u8().astype(np.float32) / 255.0
        world.step(act_hwc(module.safe_policy, obs))
        ring.push_world(world)
        nxt = ring.observation_hwc_u8().astype(np.float32) / 255.0
        if gate_hwc(module, nxt) == AGENT_CONTROL:
            streak += 1
            if streak > module.hysteresis_ticks:
                return tick, False
        else:
            streak = 0
    world.reset()
    ring.push_world(world)
    return limit, True
