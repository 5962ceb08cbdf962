"""Track geometry: centerline segments, lanes, and JSON track files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

__all__ = ["Straight", "Arc", "Track", "TrackError", "load_track", "bundled_track_names"]


class TrackError(ValueError):
    pass


@dataclass(frozen=True)
class Straight:
    length: float

    @property
    def heading_change(self) -> float:
        return 0.0

    def curvature(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Arc:
    radius: float
    angle: float  # signed heading change, positive turns left

    @property
    def length(self) -> float:
        return self.radius * abs(self.angle)

    @property
    def heading_change(self) -> float:
        return self.angle

    def curvature(self) -> float:
        return math.copysign(1.0 / self.radius, self.angle)


class Track:
    """Multi-lane road along a piecewise straight/arc centerline.

    Lane 1 is the rightmost lane; lateral offsets d are positive to the
    left of the centerline.  Road half-width is lane_count * lane_width / 2.
    """

    def __init__(self, segments: list[Straight | Arc], lane_count: int = 4,
                 lane_width: float = 3.5, closed: bool = True,
                 lane_marks: bool = True, name: str = "track") -> None:
        if not segments:
            raise TrackError("track needs at least one segment")
        if lane_count < 1 or lane_width <= 0:
            raise TrackError("bad lane configuration")
        self.segments = list(segments)
        self.lane_count = lane_count
        self.lane_width = lane_width
        self.closed = closed
        self.lane_marks = lane_marks
        self.name = name
        self.cum_lengths = []
        total = 0.0
        for seg in self.segments:
            if seg.length <= 0:
                raise TrackError(f"segment with non-positive length: {seg}")
            total += seg.length
            self.cum_lengths.append(total)
        self.total_length = total
        if closed:
            self._check_closure()

    @property
    def half_width(self) -> float:
        return self.lane_count * self.lane_width / 2.0

    def lane_center(self, lane_index: int) -> float:
        if not 1 <= lane_index <= self.lane_count:
            raise TrackError(f"lane index {lane_index} out of range")
        return (lane_index - 1 - self.lane_count / 2.0 + 0.5) * self.lane_width

    def wrap_s(self, s: float) -> float:
        if self.closed:
            return s % self.total_length
        return s

    def curvature_at(self, s: float) -> float:
        s = self.wrap_s(s)
        if s < 0 or s >= self.total_length:
            return 0.0  # open track overrun behaves as straight
        lo = 0.0
        for seg, hi in zip(self.segments, self.cum_lengths):
            if s < hi or hi == self.total_length:
                if s >= lo:
                    return seg.curvature()
            lo = hi
        return self.segments[-1].curvature()  # pragma: no cover

    def endpoint(self) -> tuple[float, float, float]:
        """World-frame (x, y, heading) after walking all segments from origin."""
        x = y = heading = 0.0
        for seg in self.segments:
            if isinstance(seg, Straight):
                x += seg.length * math.cos(heading)
                y += seg.length * math.sin(heading)
            else:
                a, r = seg.angle, seg.radius
                fwd = r * math.sin(abs(a))
                lat = math.copysign(r * (1.0 - math.cos(a)), a)
                x += fwd * math.cos(heading) - lat * math.sin(heading)
                y += fwd * math.sin(heading) + lat * math.cos(heading)
                heading += a
        return x, y, heading

    def _check_closure(self) -> None:
        x, y, heading = self.endpoint()
        turns = heading / (2.0 * math.pi)
        if abs(turns - round(turns)) > 1e-9:
            raise TrackError(
                f"closed track heading change {heading:.6f} rad is not a "
                f"multiple of 2*pi")
        if math.hypot(x, y) > 1e-6:
            raise TrackError(
                f"closed track endpoints miss by {math.hypot(x, y):.3e} m")

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        segs = []
        for seg in self.segments:
            if isinstance(seg, Straight):
                segs.append(["straight", seg.length])
            else:
                segs.append(["arc", seg.radius, seg.angle])
        return {"name": self.name, "lane_count": self.lane_count,
                "lane_width": self.lane_width, "closed": self.closed,
                "lane_marks": self.lane_marks, "segments": segs}

    @classmethod
    def from_dict(cls, data: dict) -> "Track":
        segments: list[Straight | Arc] = []
        for entry in data["segments"]:
            kind = entry[0]
            if kind == "straight":
                segments.append(Straight(float(entry[1])))
            elif kind == "arc":
                segments.append(Arc(float(entry[1]), float(entry[2])))
            else:
                raise TrackError(f"unknown segment kind {kind!r}")
        return cls(segments, lane_count=int(data.get("lane_count", 4)),
                   lane_width=float(data.get("lane_width", 3.5)),
                   closed=bool(data.get("closed", True)),
                   lane_marks=bool(data.get("lane_marks", True)),
                   name=str(data.get("name", "track")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def bundled_track_names() -> list[str]:
    files = resources.files("steerlab.sim").joinpath("tracks")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_track(ref: str | Path) -> Track:
    """Load a track by bundled name or by path to a JSON file."""
    path = Path(ref)
    if path.suffix == ".json" and path.exists():
        return Track.from_dict(json.loads(path.read_text()))
    candidate = resources.files("steerlab.sim").joinpath(f"tracks/{ref}.json")
    if candidate.is_file():
        return Track.from_dict(json.loads(candidate.read_text()))
    raise TrackError(f"unknown track {ref!r}")
