"""Dataset containers and the on-disk dataset directory format.

A dataset directory holds:

* ``manifest.json`` - counts, track name, seed, channel, config hash
* ``frames.bin``    - magic ``STEERDS1``, little-endian u32 dims
  (count, channels, height, width), then u8-quantized frame payload
* ``actions.txt`` or ``labels.txt`` - one integer per line

Frames are per-tick 3-channel images; observations are assembled on
demand by stacking frame(t-gap) with frame(t), duplicating the oldest
frame at the start of a session, exactly as the live path does.  Splits
and subsamples select *records* while sharing the full frame array, so
frame pairing stays intact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .sim.render import RenderConfig, hud_region

__all__ = ["DemoDataset", "LabeledDataset", "DatasetError", "save_dataset",
           "load_dataset", "observation_batch_hwc"]

FRAMES_MAGIC = b"STEERDS1"


class DatasetError(ValueError):
    pass


@dataclass
class _FrameDataset:
    frames: np.ndarray                 # (N, 3, H, W) u8, one per recorded tick
    gap_ticks: int
    meta: dict = field(default_factory=dict)
    records: np.ndarray | None = None  # tick indices of selected records

    def __post_init__(self) -> None:
        if self.frames.dtype != np.uint8 or self.frames.ndim != 4 \
                or self.frames.shape[1] != 3:
            raise DatasetError(f"frames must be (N, 3, H, W) u8, got "
                               f"{self.frames.shape} {self.frames.dtype}")
        if self.records is None:
            self.records = np.arange(len(self.frames))
        else:
            self.records = np.asarray(self.records, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]

    def _hud(self) -> tuple[slice, slice]:
        h, w = self.frame_shape
        return hud_region(RenderConfig(height=h, width=w, gap_ticks=self.gap_ticks))

    def observation(self, i: int) -> np.ndarray:
        """(6, H, W) float32 observation for record i, HUD zeroed."""
        t = int(self.records[i])
        older = self.frames[max(0, t - self.gap_ticks)]
        obs = np.concatenate([older, self.frames[t]]).astype(np.float32) / 255.0
        rows, cols = self._hud()
        obs[:, rows, cols] = 0.0
        return obs

    def select(self, idx: np.ndarray):
        """Sub-dataset over the given record positions (frames shared)."""
        return replace(self, records=self.records[np.asarray(idx)])


@dataclass
class DemoDataset(_FrameDataset):
    """State-action records from a demonstration session."""

    actions: np.ndarray = None  # (N,) int8 in {0, 1, 2}, one per tick

    def __post_init__(self) -> None:
        super().__post_init__()
        self.actions = np.asarray(self.actions, dtype=np.int8)
        if self.actions.shape != (len(self.frames),):
            raise DatasetError("one action per frame required")
        if len(self.actions) and not set(np.unique(self.actions)) <= {0, 1, 2}:
            raise DatasetError("action indices must be in {0, 1, 2}")

    @property
    def targets(self) -> np.ndarray:
        return self.actions[self.records]


@dataclass
class LabeledDataset(_FrameDataset):
    """State records with +/-1 instructor labels for one channel."""

    labels: np.ndarray = None   # (N,) int8 in {-1, +1}, one per tick
    channel: str = "reward"

    def __post_init__(self) -> None:
        super().__post_init__()
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != (len(self.frames),):
            raise DatasetError("one label per frame required")
        if len(self.labels) and not set(np.unique(self.labels)) <= {-1, 1}:
            raise DatasetError("labels must be -1 or +1")
        if self.channel not in ("reward", "safety"):
            raise DatasetError(f"unknown label channel {self.channel!r}")

    @property
    def targets(self) -> np.ndarray:
        return self.labels[self.records]


def observation_batch_hwc(ds: _FrameDataset, idx: np.ndarray) -> np.ndarray:
    """(B, H, W, 6) float32 observations for the trainer's hot path."""
    ticks = ds.records[np.asarray(idx)]
    older = ds.frames[np.maximum(ticks - ds.gap_ticks, 0)]
    newer = ds.frames[ticks]
    batch = np.concatenate([older, newer], axis=1)  # (B, 6, H, W) u8
    batch = np.ascontiguousarray(batch.transpose(0, 2, 3, 1)).astype(np.float32)
    batch /= 255.0
    rows, cols = ds._hud()
    batch[:, rows, cols, :] = 0.0
    return batch


def _is_full(ds: _FrameDataset) -> bool:
    return len(ds.records) == len(ds.frames) and np.array_equal(
        ds.records, np.arange(len(ds.frames)))


def save_dataset(path: str | Path, ds: DemoDataset | LabeledDataset) -> Path:
    if not _is_full(ds):
        raise DatasetError("refusing to save a split/subsampled view; "
                           "save the full recording instead")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n, c, h, w = ds.frames.shape
    header = FRAMES_MAGIC + struct.pack("<4I", n, c, h, w)
    (path / "frames.bin").write_bytes(header + ds.frames.tobytes())
    is_demo = isinstance(ds, DemoDataset)
    targets_name = "actions.txt" if is_demo else "labels.txt"
    raw_targets = ds.actions if is_demo else ds.labels
    (path / targets_name).write_text("".join(f"{int(v)}\n" for v in raw_targets))
    manifest = {
        "kind": "demo" if is_demo else "labels",
        "count": n, "channels": c, "height": h, "width": w,
        "gap_ticks": ds.gap_ticks,
        **({} if is_demo else {"channel": ds.channel}),
        **ds.meta,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path: str | Path) -> DemoDataset | LabeledDataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    raw = (path / "frames.bin").read_bytes()
    if raw[:8] != FRAMES_MAGIC:
        raise DatasetError(f"{path}: bad frames magic {raw[:8]!r}")
    n, c, h, w = struct.unpack_from("<4I", raw, 8)
    expected = 24 + n * c * h * w
    if len(raw) != expected:
        raise DatasetError(f"{path}: frames payload is {len(raw)} bytes, "
                           f"expected {expected}")
    frames = np.frombuffer(raw, dtype=np.uint8, offset=24).reshape(n, c, h, w).copy()
    gap = int(manifest.get("gap_ticks", 5))
    meta = {k: v for k, v in manifest.items()
            if k not in ("kind", "count", "channels", "height", "width",
                         "gap_ticks", "channel",
                         # run-manifest bookkeeping, re-derived on save
                         "stage", "inputs", "outputs", "elapsed_s",
                         "written_unix", "steerlab_version")}
    if manifest["kind"] == "demo":
        actions = np.loadtxt(path / "actions.txt", dtype=np.int64, ndmin=1)
        return DemoDataset(frames=frames, gap_ticks=gap, meta=meta, actions=actions)
    labels = np.loadtxt(path / "labels.txt", dtype=np.int64, ndmin=1)
    return LabeledDataset(frames=frames, gap_ticks=gap, meta=meta, labels=labels,
                          channel=manifest.get("channel", "reward"))
