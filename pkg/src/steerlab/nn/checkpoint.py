"""Binary parameter checkpoints.

Layout: the 8-byte magic ``STEERNN1`` followed by one record per layer.
Each record is an 8-byte padded ASCII layer-kind tag, a little-endian u32
tensor count, and for every parameter tensor a u32 rank, u32 extents and
the raw little-endian f32 data.  Round-trips are bit-exact for f32 nets.

Architecture metadata (kernel sizes, dropout rates, input shape) lives in
the sidecar manifest written by the training stages; the loader rebuilds
the network from that spec and then applies the checkpoint, verifying
kinds and shapes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import Network

__all__ = ["save_checkpoint", "load_checkpoint_into", "CheckpointError"]

MAGIC = b"STEERNN1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: Network, path: str | Path) -> None:
    path = Path(path)
    chunks = [MAGIC]
    for layer in net.layers:
        tag = layer.kind.encode("ascii")[:8].ljust(8)
        chunks.append(tag)
        chunks.append(struct.pack("<I", len(layer.params)))
        for p in layer.params:
            arr = np.ascontiguousarray(p, dtype="<f4")
            chunks.append(struct.pack("<I", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint_into(net: Network, path: str | Path) -> Network:
    """Load parameters into a network of matching architecture; returns it."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    off = 8
    for layer in net.layers:
        if off + 12 > len(raw):
            raise CheckpointError(f"{path}: truncated before layer {layer.name}")
        tag = raw[off:off + 8].rstrip(b" ").decode("ascii")
        off += 8
        if tag != layer.kind:
            raise CheckpointError(
                f"{path}: layer kind {tag!r} does not match network layer "
                f"{layer.name} ({layer.kind!r})")
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        if count != len(layer.params):
            raise CheckpointError(
                f"{path}: layer {layer.name} has {count} tensors, expected "
                f"{len(layer.params)}")
        for p in layer.params:
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            if tuple(shape) != p.shape:
                raise CheckpointError(
                    f"{path}: tensor shape {shape} != expected {p.shape} "
                    f"in layer {layer.name}")
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
            off += 4 * n
            p[...] = data.reshape(p.shape).astype(net.dtype)
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return net
