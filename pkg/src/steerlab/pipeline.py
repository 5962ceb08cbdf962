"""Pipeline plumbing: config handling, hashing, manifests, artifact IO.

Every stage writes a ``manifest.json`` naming its config hash, input
hashes and output hashes, so any artifact on disk is reachable from
exactly one run manifest and deterministic stages can be verified by
re-running and comparing hashes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import __version__, nn
from .sim import RenderConfig, SimConfig, Track, load_track
from .training import FitConfig, TrainingCurve

__all__ = ["DEFAULT_CONFIG", "load_config", "merge_config", "config_hash",
           "file_hash", "tree_hash", "write_manifest", "read_manifest",
           "save_net_artifact", "load_net_artifact", "sim_config", "render_config",
           "fit_config", "PipelineError"]


class PipelineError(RuntimeError):
    pass


DEFAULT_CONFIG: dict = {
    "track": "loop_marked",
    "frame": {"height": 48, "width": 64, "gap_ticks": 5},
    "sim": {"tick_dt": 0.1, "cruise_speed": 13.9, "steer_delta": 0.035,
            "spawn_lane": 2, "spawn_s": 0.0},
    "demo": {"ticks": 10_000, "noise_rate": 0.05, "target_d": 0.0},
    "labels": {"ticks": 10_000, "edge_bias": 0.25, "driver": "sweep"},
    "fit": {"batch_size": 32, "max_iterations": 4000, "eval_every": 200,
            "patience": 10, "lr": 2e-4},
    "reward": {"fraction": 1.0, "init": "trunk"},
    "safety": {"threshold": 0.0, "hysteresis_ticks": 3, "max_takeover_ticks": 300},
    "rl": {"gamma": 0.9, "epsilon": 0.05, "batch_size": 32,
           "target_sync_period": 300, "epoch_frames": 2000,
           "total_frames": 120_000, "replay_capacity": 5000,
           "latency_ticks": 0, "train_period": 8, "min_buffer": 500,
           "policy_eval_frames": 4000, "lr": 1e-4,
           "final_layer_init_range": 1e-3},
    "evaluate": {"ticks": 2000},
    "seed": 0,
}


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    cfg = json.loads(Path(path).read_text())
    return merge_config(DEFAULT_CONFIG, cfg)


def config_hash(cfg: dict) -> str:
    """Hash of the config with the seed removed (seeds vary within one study)."""
    scrubbed = copy.deepcopy(cfg)
    scrubbed.pop("seed", None)
    canon = json.dumps(scrubbed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def tree_hash(path: str | Path) -> str:
    """Hash of a directory's files (names + contents), order-independent."""
    path = Path(path)
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(path)).encode())
            h.update(bytes.fromhex(file_hash(p)))
    return h.hexdigest()[:16]


def write_manifest(out_dir: str | Path, stage: str, cfg: dict,
                   inputs: dict[str, str], outputs: dict[str, str],
                   seed: int, elapsed_s: float, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "elapsed_s": round(elapsed_s, 3),
        "written_unix": int(time.time()),
        "steerlab_version": __version__,
        **(extra or {}),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(artifact_dir: str | Path) -> dict:
    path = Path(artifact_dir) / "manifest.json"
    if not path.exists():
        raise PipelineError(f"no manifest at {path}")
    return json.loads(path.read_text())


# -- config sections to runtime objects --------------------------------------

def sim_config(cfg: dict) -> SimConfig:
    return SimConfig(**cfg["sim"])


def render_config(cfg: dict) -> RenderConfig:
    return RenderConfig(height=cfg["frame"]["height"], width=cfg["frame"]["width"],
                        gap_ticks=cfg["frame"]["gap_ticks"])


def fit_config(cfg: dict, seed: int) -> FitConfig:
    return FitConfig(seed=seed, **cfg["fit"])


# -- network artifacts --------------------------------------------------------

def save_net_artifact(out_dir: str | Path, net: nn.Network, stage: str, cfg: dict,
                      seed: int, curve: TrainingCurve | None,
                      inputs: dict[str, str], elapsed_s: float,
                      extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "net.steernn"
    nn.save_checkpoint(net, ckpt)
    arch = {"architecture": net.spec(), "input_shape": list(net.input_shape),
            "rng_seed": net.rng_seed}
    (out_dir / "architecture.json").write_text(
        json.dumps(arch, indent=2, sort_keys=True) + "\n")
    info = dict(extra or {})
    if curve is not None:
        (out_dir / "curve.json").write_text(json.dumps({
            "train_loss": curve.train_loss,
            "eval_iterations": curve.eval_iterations,
            "val_accuracy": curve.val_accuracy,
            "val_loss": curve.val_loss,
            "best_iteration": curve.best_iteration,
            "best_accuracy": curve.best_accuracy,
        }, indent=2) + "\n")
        info["curve_summary"] = curve.summary()
    outputs = {p.name: file_hash(p) for p in sorted(out_dir.iterdir())
               if p.is_file() and p.name != "manifest.json"}
    write_manifest(out_dir, stage, cfg, inputs, outputs, seed, elapsed_s, info)
    return out_dir


def load_net_artifact(artifact_dir: str | Path) -> tuple[nn.Network, dict]:
    artifact_dir = Path(artifact_dir)
    arch_path = artifact_dir / "architecture.json"
    if not arch_path.exists():
        raise PipelineError(f"no architecture.json under {artifact_dir}")
    arch = json.loads(arch_path.read_text())
    net = nn.build_network(arch["architecture"], tuple(arch["input_shape"]),
                           seed=arch.get("rng_seed", 0))
    nn.load_checkpoint_into(net, artifact_dir / "net.steernn")
    net.eval()
    return net, read_manifest(artifact_dir)


def resolve_track(cfg: dict) -> Track:
    return load_track(cfg["track"])
