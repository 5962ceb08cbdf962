"""Scripted demonstrator and instructor stand-ins.

These teachers may read the world's ground-truth probe; nothing they
produce for a learner carries probe output, only frames, actions and
labels (the teacher firewall).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DemoDataset, DatasetError, LabeledDataset
from .sim import (LEFT, NO_ACTION, RIGHT, FrameRing, RenderConfig, SimConfig,
                  Track, World)

__all__ = ["steer_toward", "oracle_drive", "oracle_reward_label",
           "oracle_safety_label", "LaneSweepDriver", "OracleDriver",
           "record_demonstrations", "record_labels", "TARGET_LANE"]

TARGET_LANE = 2  # the designated lane rewarded by the reward channel


def steer_toward(world: World, target_d: float, deadband: float = 0.2,
                 lookahead_m: float = 4.0, psi_cap: float = 1.0) -> int:
    """Proportional steering with heading lookahead toward a lateral target."""
    st = world.state
    predicted = st.d + lookahead_m * math.sin(st.psi)
    if predicted < target_d - deadband and st.psi < psi_cap:
        return LEFT
    if predicted > target_d + deadband and st.psi > -psi_cap:
        return RIGHT
    return NO_ACTION


def oracle_drive(world: World, target_lane: int = TARGET_LANE) -> int:
    """Steer toward the center of the given lane (1 = rightmost)."""
    return steer_toward(world, world.track.lane_center(target_lane))


def oracle_reward_label(world: World) -> int:
    """+1 in the designated lane, -1 anywhere else (including off-road)."""
    return 1 if world.probe().lane_index == TARGET_LANE else -1


def oracle_safety_label(world: World) -> int:
    """+1 on the road facing the correct direction, -1 otherwise."""
    p = world.probe()
    return 1 if (p.on_road and p.aligned) else -1


class OracleDriver:
    """Driver wrapper around steer_toward with a fixed lateral target."""

    def __init__(self, target_d: float) -> None:
        self.target_d = target_d

    def act(self, world: World, obs_hwc_u8: np.ndarray, rng: np.random.Generator) -> int:
        return steer_toward(world, self.target_d)


class LaneSweepDriver:
    """Dwells at varied lateral positions and hops lanes, covering the road.

    Dwell targets are uniform within each visited lane (instructors do not
    park on exact lane centers), and a fraction of dwells deliberately ride
    close to a lane boundary: a teaching session must cover the borderline
    cases the labels actually hinge on, not just comfortable mid-lane
    driving.
    """

    def __init__(self, dwell_range: tuple[int, int] = (80, 200),
                 edge_margin: float = 0.35, boundary_bias: float = 0.35) -> None:
        self.dwell_range = dwell_range
        self.edge_margin = edge_margin
        self.boundary_bias = boundary_bias
        self._target_lane: int | None = None
        self._target_d = 0.0
        self._remaining = 0

    def act(self, world: World, obs_hwc_u8: np.ndarray, rng: np.random.Generator) -> int:
        track = world.track
        if self._remaining <= 0 or self._target_lane is None:
            lanes = list(range(1, track.lane_count + 1))
            if self._target_lane in lanes and len(lanes) > 1:
                lanes.remove(self._target_lane)
            self._target_lane = int(rng.choice(lanes))
            if rng.random() < self.boundary_bias:
                # hug one of the lane's boundaries
                side = 1.0 if rng.random() < 0.5 else -1.0
                offset = side * (track.lane_width / 2.0 - float(rng.uniform(0.0, 0.4)))
            else:
                half = track.lane_width / 2.0 - self.edge_margin
                offset = float(rng.uniform(-half, half))
            self._target_d = track.lane_center(self._target_lane) + offset
            self._remaining = int(rng.integers(*self.dwell_range))
        self._remaining -= 1
        return steer_toward(world, self._target_d)


def record_demonstrations(track: Track, ticks: int, noise_rate: float = 0.0,
                          seed: int = 0, sim_cfg: SimConfig = SimConfig(),
                          render_cfg: RenderConfig = RenderConfig(),
                          target_d: float = 0.0) -> DemoDataset:
    """Drive the demonstrator closed-loop and record one (frame, action) per tick.

    The demonstrator holds the road center by default, ignoring lanes.  With
    probability ``noise_rate`` the executed-and-recorded action is replaced
    by a uniformly random one (noisy demonstrations).
    """
    if ticks < 1:
        raise ValueError("ticks must be >= 1")
    rng = np.random.default_rng(seed)
    world = World(track, sim_cfg)
    ring = FrameRing(render_cfg)
    frames = np.empty((ticks, 3, render_cfg.height, render_cfg.width), dtype=np.uint8)
    actions = np.empty(ticks, dtype=np.int8)
    for t in range(ticks):
        frame_hwc = ring.push_world(world)
        a = steer_toward(world, target_d)
        if noise_rate > 0 and rng.random() < noise_rate:
            a = int(rng.integers(0, 3))
        frames[t] = frame_hwc.transpose(2, 0, 1)
        actions[t] = a
        world.step(a)
    meta = {"track": track.name, "seed": seed, "noise_rate": noise_rate,
            "provenance": "oracle", "target_d": target_d}
    return DemoDataset(frames=frames, gap_ticks=render_cfg.gap_ticks,
                       meta=meta, actions=actions)


_BLOCK_TICKS = 50


def record_labels(track: Track, driver, ticks: int, channel: str,
                  edge_bias: float = 0.0, seed: int = 0,
                  sim_cfg: SimConfig = SimConfig(),
                  render_cfg: RenderConfig = RenderConfig()) -> LabeledDataset:
    """Drive and label every tick via the channel's oracle labeler.

    Per 50-tick block, with probability ``edge_bias`` the driver is
    overridden by a forced excursion toward (and slightly past) a road
    edge, so edge conditions and recoveries are both represented.
    """
    if channel not in ("reward", "safety"):
        raise DatasetError(f"unknown label channel {channel!r}")
    labeler = oracle_reward_label if channel == "reward" else oracle_safety_label
    rng = np.random.default_rng(seed)
    world = World(track, sim_cfg)
    ring = FrameRing(render_cfg)
    frames = np.empty((ticks, 3, render_cfg.height, render_cfg.width), dtype=np.uint8)
    labels = np.empty(ticks, dtype=np.int8)
    occupancy = np.zeros(track.lane_count + 1, dtype=np.int64)  # [off, lane1..n]
    excursion_target: float | None = None
    for t in range(ticks):
        if t % _BLOCK_TICKS == 0:
            if edge_bias > 0 and rng.random() < edge_bias:
                side = 1.0 if rng.random() < 0.5 else -1.0
                excursion_target = side * (track.half_width + rng.uniform(0.5, 2.0))
            else:
                excursion_target = None
        frame_hwc = ring.push_world(world)
        frames[t] = frame_hwc.transpose(2, 0, 1)
        labels[t] = labeler(world)
        probe = world.probe()
        occupancy[probe.lane_index or 0] += 1
        if excursion_target is not None:
            a = steer_toward(world, excursion_target, psi_cap=0.8)
        else:
            a = driver.act(world, ring.observation_hwc_u8(), rng)
        world.step(a)
    classes = set(np.unique(labels))
    if classes != {-1, 1}:
        raise DatasetError(
            f"recorded labels are single-class ({classes}); untrainable — "
            f"raise edge_bias or change the driver")
    meta = {"track": track.name, "seed": seed, "edge_bias": edge_bias,
            "provenance": "oracle", "lane_occupancy": occupancy.tolist()}
    return LabeledDataset(frames=frames, gap_ticks=render_cfg.gap_ticks,
                          meta=meta, labels=labels, channel=channel)
