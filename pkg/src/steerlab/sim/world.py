"""Frenet-frame car kinematics at fixed cruise speed, with restart rules.

The car state is track-relative: arclength s, signed lateral offset d
(positive left of the centerline) and heading error psi against the track
tangent.  Speed is constant (cruise control); the only control is a
steering increment per tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .track import Track

__all__ = ["Action", "NO_ACTION", "LEFT", "RIGHT", "ACTION_NAMES", "SimConfig",
           "CarState", "StepEvents", "Probe", "World"]

NO_ACTION, LEFT, RIGHT = 0, 1, 2
ACTION_NAMES = ("none", "left", "right")
Action = int
_STEER = {NO_ACTION: 0.0, LEFT: 1.0, RIGHT: -1.0}


@dataclass(frozen=True)
class SimConfig:
    tick_dt: float = 0.1          # s per tick (10 Hz)
    cruise_speed: float = 13.9    # m/s (~50 km/h)
    steer_delta: float = 0.035    # rad of heading error per steering tick
    spawn_lane: int = 2
    spawn_s: float = 0.0


@dataclass
class CarState:
    s: float
    d: float
    psi: float
    speed: float


@dataclass
class StepEvents:
    off_road_entry: bool = False
    on_road_entry: bool = False
    restart_stuck: bool = False
    restart_wrong_direction: bool = False

    @property
    def restarted(self) -> bool:
        return self.restart_stuck or self.restart_wrong_direction

    def any(self) -> bool:
        return (self.off_road_entry or self.on_road_entry or self.restart_stuck
                or self.restart_wrong_direction)


@dataclass(frozen=True)
class Probe:
    lane_index: int | None
    on_road: bool
    aligned: bool


def _wrap_angle(a: float) -> float:
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if a == -math.pi else a


class World:
    """One car on one track; single-threaded by contract."""

    def __init__(self, track: Track, config: SimConfig = SimConfig()) -> None:
        self.track = track
        self.config = config
        self.tick = 0
        self.state = CarState(0.0, 0.0, 0.0, config.cruise_speed)
        self.reset()

    def reset(self) -> None:
        cfg = self.config
        self.state = CarState(s=self.track.wrap_s(cfg.spawn_s),
                              d=self.track.lane_center(cfg.spawn_lane),
                              psi=0.0, speed=cfg.cruise_speed)
        self._on_road = True

    def step(self, action: Action) -> StepEvents:
        """Advance one tick; returns boundary and restart events."""
        if action not in _STEER:
            raise ValueError(f"unknown action {action!r}")
        st = self.state
        cfg = self.config
        kappa = self.track.curvature_at(st.s)
        st.psi = _wrap_angle(
            st.psi + _STEER[action] * cfg.steer_delta
            - kappa * st.speed * cfg.tick_dt * math.cos(st.psi))
        st.d += st.speed * cfg.tick_dt * math.sin(st.psi)
        st.s = self.track.wrap_s(st.s + st.speed * cfg.tick_dt * math.cos(st.psi))
        self.tick += 1

        events = StepEvents()
        on_road_now = abs(st.d) <= self.track.half_width
        if self._on_road and not on_road_now:
            events.off_road_entry = True
        elif not self._on_road and on_road_now:
            events.on_road_entry = True
        self._on_road = on_road_now

        restart = self.check_restart()
        events.restart_stuck = restart.restart_stuck
        events.restart_wrong_direction = restart.restart_wrong_direction
        events.on_road_entry = events.on_road_entry or restart.on_road_entry
        return events

    def check_restart(self) -> StepEvents:
        """Apply the restart rules; resets the car if one fires."""
        st = self.state
        events = StepEvents()
        if abs(st.psi) > math.pi / 2.0:
            events.restart_wrong_direction = True
        if abs(st.d) > self.track.half_width + 2.0 * self.track.lane_width:
            events.restart_stuck = True
        if events.restarted:
            was_off = not self._on_road
            self.reset()
            if was_off:
                events.on_road_entry = True  # teleported back onto the road
        return events

    def probe(self) -> Probe:
        """Ground truth for teachers and tests; never fed to a learner."""
        st = self.state
        track = self.track
        on_road = abs(st.d) <= track.half_width
        # explicit boundary comparisons keep the half-open lane intervals
        # exact in floating point: lane k iff b_{k-1} <= d < b_k
        lane_index = None
        if on_road:
            for k in range(1, track.lane_count + 1):
                lo = (k - 1 - track.lane_count / 2.0) * track.lane_width
                hi = (k - track.lane_count / 2.0) * track.lane_width
                if lo <= st.d < hi:
                    lane_index = k
                    break
        return Probe(lane_index=lane_index, on_road=on_road,
                     aligned=abs(st.psi) <= math.pi / 2.0)
