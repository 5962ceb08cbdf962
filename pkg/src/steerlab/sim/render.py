"""Pixel rendering of the world and observation assembly.

The view is ego-centered and track-unrolled: columns span the lateral
window around the car, rows span the road ahead along the centerline, so
lane geometry rasterizes to (anti-aliased) vertical lines and the affine
world-to-raster map is independently checkable.  Channel 0 holds the road
surface mask, channel 1 lane marks and road boundary lines, channel 2 a
heading ray plus the HUD speed box that preprocessing blanks out.

Live and replayed paths share one quantization: frames are stored as u8
(x255) and dequantized to [0, 1] for every learner input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import World

__all__ = ["RenderConfig", "render", "render_hwc", "hud_region", "quantize",
           "dequantize", "FrameRing", "preprocess"]


@dataclass(frozen=True)
class RenderConfig:
    height: int = 48
    width: int = 64
    forward_m: float = 40.0   # rows cover [0, forward_m) ahead of the car
    lateral_m: float = 4.0    # columns cover +/- lateral_m around the car
    gap_ticks: int = 5        # observation stacks frame(t-gap) with frame(t)
    hud: bool = True
    ray_len_m: float = 10.0
    dash_period_m: float = 6.0
    dash_duty: float = 0.4
    line_level: float = 0.7   # paint brightness of lane/boundary lines
    texture: float = 0.45     # road texture depth (0 disables)
    texture_cell_m: tuple[float, float] = (1.0, 0.625)  # along-track x lateral


def _lattice_hash(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic [0,1) value per integer lattice cell (no RNG state)."""
    h = (ix[:, None] * 374761393 + iy[None, :] * 668265263 + salt * 974711) \
        .astype(np.uint32)
    h ^= h >> 13
    h *= np.uint32(1274126177)
    h ^= h >> 16
    return (h & np.uint32(0xFFFF)).astype(np.float32) / 65536.0


def hud_region(cfg: RenderConfig) -> tuple[slice, slice]:
    """Raster region of the speed box (zeroed out during preprocessing)."""
    return slice(0, max(1, cfg.height // 8)), slice(cfg.width - max(1, cfg.width // 5), cfg.width)


def _col_f(delta: float, cfg: RenderConfig) -> float:
    # lateral offset (positive = left of the car) to fractional column
    return (cfg.lateral_m - delta) / (2.0 * cfg.lateral_m) * cfg.width


def _splat_col(row_vals: np.ndarray, col_f: float, rows: np.ndarray | slice,
               weight: float | np.ndarray = 1.0) -> None:
    # anti-aliased 1px-wide vertical line: coverage split over two columns
    w = row_vals.shape[1]
    c0 = math.floor(col_f - 0.5)
    for c, cov in ((c0, 1.0 - abs(c0 + 0.5 - col_f)), (c0 + 1, 1.0 - abs(c0 + 1.5 - col_f))):
        if 0 <= c < w and cov > 0:
            row_vals[rows, c] = np.maximum(row_vals[rows, c], weight * cov)


def render_hwc(world: World, cfg: RenderConfig) -> np.ndarray:
    """Deterministic (H, W, 3) float32 frame with values in [0, 1]."""
    h, w = cfg.height, cfg.width
    frame = np.zeros((h, w, 3), dtype=np.float32)
    st = world.state
    track = world.track
    hw = track.half_width
    lane_w = track.lane_width

    # channel 0: road surface, textured so scenes are visually distinct
    # (the texture is a pure function of world coordinates: deterministic,
    # and it scrolls coherently as the car moves)
    col_centers = cfg.lateral_m - (np.arange(w) + 0.5) * (2.0 * cfg.lateral_m / w)
    d_cols = st.d + col_centers
    on_road = np.abs(d_cols) <= hw
    row_step = cfg.forward_m / h
    s_rows = st.s + (h - 1 - np.arange(h)) * row_step
    if cfg.texture > 0:
        cell_s, cell_d = cfg.texture_cell_m
        ix = np.floor(s_rows / cell_s).astype(np.int64)
        iy = np.floor(d_cols / cell_d).astype(np.int64)
        tex = _lattice_hash(ix, iy, salt=1)
        road = (1.0 - cfg.texture) + cfg.texture * tex
        frame[:, :, 0] = np.where(on_road[None, :], road, 0.0)
        # faint texture bleeds into the line channel; marks must be found
        # against it rather than on an empty canvas
        frame[:, :, 1] = np.where(on_road[None, :],
                                  0.25 * _lattice_hash(ix, iy, salt=2), 0.0)
    else:
        frame[:, :, 0] = on_road.astype(np.float32)

    # channel 1: lane marks and road boundary lines.  All lines paint alike
    # (dashed, staggered phase): lane identity must be read from position
    # relative to the road, not from a per-line visual signature.
    for k in range(track.lane_count + 1):
        d_line = -hw + k * lane_w
        interior = 0 < k < track.lane_count
        if interior and not track.lane_marks:
            continue
        col = _col_f(d_line - st.d, cfg)
        phase = k * 1.7
        dash_on = ((s_rows + phase) % cfg.dash_period_m) \
            < cfg.dash_period_m * cfg.dash_duty
        _splat_col(frame[:, :, 1], col, dash_on, cfg.line_level)

    # channel 2: heading ray from the car's raster anchor
    ray = frame[:, :, 2]
    for t in np.linspace(0.0, cfg.ray_len_m, 25):
        fwd = t * math.cos(st.psi)
        lat = t * math.sin(st.psi)
        row = h - 1 - int(round(fwd / row_step))
        if 0 <= row < h:
            _splat_col(ray, _col_f(lat, cfg), row, 1.0)

    if cfg.hud:
        rows, cols = hud_region(cfg)
        frame[rows, cols, 2] = min(1.0, st.speed / 20.0)
    np.clip(frame, 0.0, 1.0, out=frame)
    return frame


def render(world: World, cfg: RenderConfig) -> np.ndarray:
    """Frame in the public channels-first layout (3, H, W)."""
    return np.ascontiguousarray(render_hwc(world, cfg).transpose(2, 0, 1))


def quantize(frame: np.ndarray) -> np.ndarray:
    """[0,1] float frame to u8 storage form (the pipeline's only precision)."""
    return np.rint(np.asarray(frame) * 255.0).astype(np.uint8)


def dequantize(frame_u8: np.ndarray) -> np.ndarray:
    return frame_u8.astype(np.float32) / 255.0


def preprocess(frame_history: list[np.ndarray], cfg: RenderConfig) -> np.ndarray:
    """Stack frame(t-gap) with frame(t) into a (6, H, W) observation.

    The oldest available frame substitutes when the history is shorter than
    the gap; the HUD region is zeroed in both frames.
    """
    if not frame_history:
        raise ValueError("frame history is empty")
    newest = frame_history[-1]
    older = frame_history[max(0, len(frame_history) - 1 - cfg.gap_ticks)]
    obs = np.concatenate([older, newest], axis=0).astype(np.float32)
    rows, cols = hud_region(cfg)
    obs[:, rows, cols] = 0.0
    return obs


class FrameRing:
    """Bounded history of quantized frames feeding observation assembly.

    Frames are stored channels-last u8; observations come out HUD-zeroed,
    ready for dequantization.
    """

    def __init__(self, cfg: RenderConfig) -> None:
        self.cfg = cfg
        self._frames: list[np.ndarray] = []

    def reset(self) -> None:
        self._frames.clear()

    def push_world(self, world: World) -> np.ndarray:
        """Render, quantize and store the current frame; returns it (HWC u8)."""
        frame = quantize(render_hwc(world, self.cfg))
        self.push(frame)
        return frame

    def push(self, frame_hwc_u8: np.ndarray) -> None:
        self._frames.append(frame_hwc_u8)
        if len(self._frames) > self.cfg.gap_ticks + 1:
            self._frames.pop(0)

    def __len__(self) -> int:
        return len(self._frames)

    def latest(self) -> np.ndarray:
        """Most recent raw frame (HWC u8, HUD intact)."""
        if not self._frames:
            raise ValueError("no frames pushed yet")
        return self._frames[-1]

    def observation_hwc_u8(self) -> np.ndarray:
        """(H, W, 6) u8 observation: channels 0-2 older frame, 3-5 newest."""
        if not self._frames:
            raise ValueError("no frames pushed yet")
        # capacity is gap+1, so the head is frame(t-gap), or the oldest
        # available frame early on (duplication rule)
        obs = np.concatenate([self._frames[0], self._frames[-1]], axis=2)
        rows, cols = hud_region(self.cfg)
        obs = obs.copy()
        obs[rows, cols, :] = 0
        return obs
