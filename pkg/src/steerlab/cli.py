"""Command-line pipeline: record, train, reinforce, evaluate, report, serve.

Exit codes: 0 success, 1 runtime failure (divergence, crash), 2 usage or
missing input.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import nn
from .data import DatasetError, load_dataset, save_dataset
from .imitation import PolicyDriver, evaluate_policy, split_dataset, train_policy
from .pipeline import (PipelineError, config_hash, file_hash, fit_config,
                       load_config, load_net_artifact, read_manifest, render_config,
                       resolve_track, save_net_artifact, sim_config, tree_hash,
                       write_manifest)
from .reward import subsample, train_reward
from .rl import (RLConfig, RLDiverged, DdqnLearner, RunListeners, build_q_net,
                 il_initialize, metrics_from_json, metrics_to_json,
                 policy_evaluation_phase, rl_train)
from .safety import SafetyModule, train_safety
from .sim import World
from .teachers import LaneSweepDriver, OracleDriver, record_demonstrations, record_labels
from .training import TrainingDiverged

ACCIDENT_BUCKETS = ((0, 3), (3, 12), (12, 39), (39, 60))


class UsageError(RuntimeError):
    pass


def _limit_blas_threads() -> None:
    # small GEMMs: single-threaded BLAS is both fastest here and byte-reproducible
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=1)
    except Exception:
        pass


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _seed(cfg: dict, args) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


# -- subcommands ---------------------------------------------------------------

def cmd_demo_record(args) -> int:
    cfg = load_config(args.config)
    if args.ticks:
        cfg["demo"]["ticks"] = args.ticks
    if args.noise_rate is not None:
        cfg["demo"]["noise_rate"] = args.noise_rate
    seed = _seed(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_text("")  # fail before simulating if the target is unwritable
    probe.unlink()
    started = time.time()
    ds = record_demonstrations(resolve_track(cfg), ticks=cfg["demo"]["ticks"],
                               noise_rate=cfg["demo"]["noise_rate"], seed=seed,
                               sim_cfg=sim_config(cfg), render_cfg=render_config(cfg),
                               target_d=cfg["demo"]["target_d"])
    ds.meta["config_hash"] = config_hash(cfg)
    save_dataset(out, ds)
    dataset_manifest = json.loads((out / "manifest.json").read_text())
    outputs = {p.name: file_hash(p) for p in sorted(out.iterdir())
               if p.is_file() and p.name != "manifest.json"}
    write_manifest(out, "demo-record", cfg, {}, outputs, seed, time.time() - started,
                   dataset_manifest)
    print(f"wrote {len(ds)} demo records to {out}")
    return 0


def _make_driver(spec: str, cfg: dict):
    if spec == "sweep":
        return LaneSweepDriver()
    if spec == "center":
        return OracleDriver(0.0)
    if spec.startswith("lane:"):
        lane = int(spec.split(":", 1)[1])
        track = resolve_track(cfg)
        return OracleDriver(track.lane_center(lane))
    if spec.startswith("policy:"):
        net, _ = load_net_artifact(_require(Path(spec.split(":", 1)[1]),
                                            "policy checkpoint"))
        return PolicyDriver(net)
    raise UsageError(f"unknown driver {spec!r}")


def cmd_label_record(args) -> int:
    cfg = load_config(args.config)
    if args.ticks:
        cfg["labels"]["ticks"] = args.ticks
    if args.edge_bias is not None:
        cfg["labels"]["edge_bias"] = args.edge_bias
    if args.driver:
        cfg["labels"]["driver"] = args.driver
    seed = _seed(cfg, args)
    driver = _make_driver(cfg["labels"]["driver"], cfg)
    out = Path(args.out)
    started = time.time()
    ds = record_labels(resolve_track(cfg), driver, ticks=cfg["labels"]["ticks"],
                       channel=args.channel, edge_bias=cfg["labels"]["edge_bias"],
                       seed=seed, sim_cfg=sim_config(cfg),
                       render_cfg=render_config(cfg))
    ds.meta["config_hash"] = config_hash(cfg)
    save_dataset(out, ds)
    dataset_manifest = json.loads((out / "manifest.json").read_text())
    outputs = {p.name: file_hash(p) for p in sorted(out.iterdir())
               if p.is_file() and p.name != "manifest.json"}
    write_manifest(out, "label-record", cfg, {}, outputs, seed, time.time() - started,
                   {**dataset_manifest, "driver": cfg["labels"]["driver"]})
    print(f"wrote {len(ds)} {args.channel} labels to {out}")
    return 0


def cmd_train_policy(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    data_dir = _require(Path(args.data), "demo dataset")
    ds = load_dataset(data_dir)
    train, val = split_dataset(ds, seed=seed)
    started = time.time()
    net, curve = train_policy(train, val, fit_config(cfg, seed))
    save_net_artifact(Path(args.out), net, "train-policy", cfg, seed, curve,
                      {"dataset": tree_hash(data_dir)}, time.time() - started)
    print(f"policy: best validation accuracy {curve.best_accuracy:.4f} "
          f"at iteration {curve.best_iteration}")
    return 0


def _train_scorer(args, stage: str) -> int:
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    data_dir = _require(Path(args.data), "label dataset")
    ds = load_dataset(data_dir)
    fraction = args.fraction if args.fraction is not None else cfg["reward"]["fraction"]
    inputs = {"dataset": tree_hash(data_dir)}
    extra = {"fraction": fraction}
    train, val = split_dataset(ds, seed=seed)
    if fraction < 1.0:
        train = subsample(train, fraction, seed=seed)
        extra["subsample_seed"] = seed
    init = "fresh"
    if args.policy:
        policy_net, _ = load_net_artifact(_require(Path(args.policy), "policy artifact"))
        init = policy_net
        inputs["policy"] = tree_hash(Path(args.policy))
    trainer = train_reward if stage == "train-reward" else train_safety
    started = time.time()
    try:
        net, curve = trainer(train, val, fit_config(cfg, seed), init=init)
    except DatasetError as e:
        raise UsageError(str(e)) from e
    save_net_artifact(Path(args.out), net, stage, cfg, seed, curve, inputs,
                      time.time() - started, extra)
    print(f"{stage}: best validation sign-accuracy {curve.best_accuracy:.4f} "
          f"(fraction {fraction})")
    return 0


def cmd_train_reward(args) -> int:
    return _train_scorer(args, "train-reward")


def cmd_train_safety(args) -> int:
    return _train_scorer(args, "train-safety")


class _MetricsWriter(RunListeners):
    """Crash-safe append of epoch metrics while a run is in flight."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self.path.write_text("")

    def on_epoch(self, m) -> None:
        with open(self.path, "a") as f:
            f.write(metrics_to_json(m) + "\n")
            f.flush()


def cmd_rl_train(args) -> int:
    cfg = load_config(args.config)
    if args.total_frames:
        cfg["rl"]["total_frames"] = args.total_frames
    if args.epoch_frames:
        cfg["rl"]["epoch_frames"] = args.epoch_frames
    seed = _seed(cfg, args)
    init_mode = args.init_mode or cfg["rl"].get("init_mode", "il")
    safety_enabled = bool(args.safety)
    cfg["rl"]["init_mode"] = init_mode
    cfg["rl"]["safety_enabled"] = safety_enabled
    rl_cfg = RLConfig(seed=seed, **cfg["rl"])

    reward_dir = _require(Path(args.reward), "reward artifact")
    reward_net, _ = load_net_artifact(reward_dir)
    inputs = {"reward": tree_hash(reward_dir)}

    policy_net = None
    if init_mode in ("il", "il+policy_eval") or safety_enabled:
        if not args.policy:
            raise UsageError(f"init_mode {init_mode!r} (or safety) requires --policy")
        policy_dir = _require(Path(args.policy), "policy artifact")
        policy_net, _ = load_net_artifact(policy_dir)
        inputs["policy"] = tree_hash(policy_dir)

    safety_module = None
    if safety_enabled:
        safety_dir = _require(Path(args.safety), "safety artifact")
        safety_net, _ = load_net_artifact(safety_dir)
        inputs["safety"] = tree_hash(safety_dir)
        safety_module = SafetyModule(
            net=safety_net, safe_policy=policy_net,
            threshold=cfg["safety"]["threshold"],
            hysteresis_ticks=cfg["safety"]["hysteresis_ticks"],
            max_takeover_ticks=cfg["safety"]["max_takeover_ticks"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    render_cfg = render_config(cfg)
    shape = (6, render_cfg.height, render_cfg.width)
    track = resolve_track(cfg)
    world = World(track, sim_config(cfg))
    rng_frames = rl_cfg.policy_eval_frames if init_mode == "il+policy_eval" else 0

    if init_mode == "random":
        q_init = build_q_net(shape, seed=seed)
    else:
        q_init = il_initialize(policy_net, seed=seed,
                               init_range=rl_cfg.final_layer_init_range)
    learner = DdqnLearner(q_init, rl_cfg)
    started = time.time()
    if rng_frames:
        policy_evaluation_phase(learner, policy_net, world, rng_frames,
                                reward_net, render_cfg, np.random.default_rng(seed))

    writer = _MetricsWriter(out / "metrics.jsonl")
    extra = {"init_mode": init_mode, "safety_enabled": safety_enabled,
             "final_layer_init_range": rl_cfg.final_layer_init_range,
             "train_period": rl_cfg.train_period,
             "takeover_transitions_recorded": True,
             "policy_eval_frames": rng_frames}
    try:
        q_final, metrics = rl_train(rl_cfg, world, reward_net, safety_module,
                                    q_init, render_cfg=render_cfg, listeners=writer,
                                    learner=learner)
    except RLDiverged as e:
        q_init.set_parameters(e.checkpoint)
        save_net_artifact(out, q_init, "rl-train", cfg, seed, None, inputs,
                          time.time() - started,
                          {**extra, "aborted": "non-finite loss",
                           "epochs_completed": len(e.metrics)})
        print("rl-train aborted on non-finite loss; last healthy checkpoint kept",
              file=sys.stderr)
        return 1
    save_net_artifact(out, q_final, "rl-train", cfg, seed, None, inputs,
                      time.time() - started,
                      {**extra, "epochs_completed": len(metrics)})
    last = metrics[-1] if metrics else None
    if last:
        print(f"rl-train done: {len(metrics)} epochs, final avg_reward "
              f"{last.avg_reward:.4f}, accidents {last.accidents}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    ticks = args.ticks if args.ticks is not None else cfg["evaluate"]["ticks"]
    if ticks < 1:
        raise UsageError("ticks must be >= 1")
    actor_dir = _require(Path(args.checkpoint), "actor artifact")
    reward_dir = _require(Path(args.reward), "reward artifact")
    actor, _ = load_net_artifact(actor_dir)
    reward_net, _ = load_net_artifact(reward_dir)
    started = time.time()
    avg = evaluate_policy(actor, resolve_track(cfg), reward_net, ticks,
                          sim_config(cfg), render_config(cfg))
    print(f"{avg:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "evaluation.json").write_text(json.dumps(
            {"average_reward": avg, "ticks": ticks}, indent=2) + "\n")
        write_manifest(out, "evaluate", cfg,
                       {"actor": tree_hash(actor_dir), "reward": tree_hash(reward_dir)},
                       {"evaluation.json": file_hash(out / "evaluation.json")},
                       _seed(cfg, args), time.time() - started, {"ticks": ticks})
    return 0


def _load_run(run_dir: Path):
    manifest = read_manifest(run_dir)
    lines = (run_dir / "metrics.jsonl").read_text().splitlines()
    return manifest, [metrics_from_json(line) for line in lines if line.strip()]


def _median_table(runs, field: str) -> list[dict]:
    epochs = min(len(m) for _, m in runs)
    rows = []
    for e in range(epochs):
        row = {"epoch": e}
        vals = []
        for manifest, metrics in runs:
            v = getattr(metrics[e], field)
            row[f"seed{manifest['seed']}"] = v
            vals.append(v)
        row["median"] = float(np.median(vals))
        rows.append(row)
    return rows


def _write_tsv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0].keys())
    lines = ["\t".join(cols)]
    for row in rows:
        lines.append("\t".join(f"{row[c]:.6g}" if isinstance(row[c], float)
                               else str(row[c]) for c in cols))
    path.write_text("\n".join(lines) + "\n")


def cmd_report(args) -> int:
    run_dirs = [_require(Path(d), "run directory") for d in args.runs]
    runs = [_load_run(d) for d in run_dirs]
    hashes = {m["config_hash"] for m, _ in runs}
    if len(hashes) > 1:
        raise UsageError(f"refusing to compare runs with mixed config hashes: {hashes}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for field, fname in (("avg_reward", "reward_vs_epoch.tsv"),
                         ("avg_action_value", "action_value_vs_epoch.tsv"),
                         ("takeover_fraction", "takeover_vs_epoch.tsv")):
        _write_tsv(out / fname, _median_table(runs, field))
    bucket_rows = []
    epochs = min(len(m) for _, m in runs)
    for lo, hi in ACCIDENT_BUCKETS:
        hi_clip = min(hi, epochs)
        if lo >= hi_clip:
            continue
        row = {"epochs": f"{lo}-{hi_clip}"}
        vals = []
        for manifest, metrics in runs:
            per_epoch = np.mean([metrics[e].accidents for e in range(lo, hi_clip)])
            row[f"seed{manifest['seed']}"] = float(per_epoch)
            vals.append(per_epoch)
        row["median"] = float(np.median(vals))
        bucket_rows.append(row)
    _write_tsv(out / "accidents_buckets.tsv", bucket_rows)
    reward_rows = _median_table(runs, "avg_reward")
    print(f"report over {len(runs)} runs, {epochs} epochs; final median "
          f"avg_reward {reward_rows[-1]['median']:.4f}")
    return 0


def cmd_serve(args) -> int:
    import threading

    import uvicorn

    from .service import TrainerBus, create_app

    cfg = load_config(args.config)
    bus = TrainerBus()
    app = create_app(cfg, export_root=Path(args.export_root),
                     static_dir=Path(args.static) if args.static else None,
                     bus=bus)
    if args.demo_training:
        def _background_training() -> None:
            from .sim import World
            rl_cfg = RLConfig(seed=0, **cfg["rl"])
            world = World(resolve_track(cfg), sim_config(cfg))
            render_cfg = render_config(cfg)
            shape = (6, render_cfg.height, render_cfg.width)
            reward_net, _ = load_net_artifact(_require(Path(args.reward),
                                                       "reward artifact"))
            q = build_q_net(shape, seed=0)
            rl_train(rl_cfg, world, reward_net, None, q, render_cfg=render_cfg,
                     listeners=bus)

        threading.Thread(target=_background_training, daemon=True).start()
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steerlab",
                                description="staged teaching of a steering agent")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeded=True):
        sp.add_argument("--config", type=Path, default=None,
                        help="JSON config; defaults applied underneath")
        if seeded:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("demo-record", help="record oracle demonstrations")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ticks", type=int, default=None)
    sp.add_argument("--noise-rate", type=float, default=None)
    sp.set_defaults(fn=cmd_demo_record)

    sp = sub.add_parser("label-record", help="record labeled states")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--channel", choices=("reward", "safety"), required=True)
    sp.add_argument("--driver", default=None,
                    help="sweep | center | lane:<k> | policy:<artifact dir>")
    sp.add_argument("--ticks", type=int, default=None)
    sp.add_argument("--edge-bias", type=float, default=None)
    sp.set_defaults(fn=cmd_label_record)

    sp = sub.add_parser("train-policy", help="imitation: train the policy net")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_policy)

    for name, fn in (("train-reward", cmd_train_reward),
                     ("train-safety", cmd_train_safety)):
        sp = sub.add_parser(name, help=f"{name.replace('-', ' ')} net")
        common(sp)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--policy", default=None,
                        help="policy artifact for trunk initialization")
        sp.add_argument("--fraction", type=float, default=None,
                        help="train-split subsample fraction (ablations)")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("rl-train", help="DDQN training")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--reward", required=True)
    sp.add_argument("--policy", default=None)
    sp.add_argument("--safety", default=None)
    sp.add_argument("--init-mode", choices=("random", "il", "il+policy_eval"),
                    default=None)
    sp.add_argument("--total-frames", type=int, default=None)
    sp.add_argument("--epoch-frames", type=int, default=None)
    sp.set_defaults(fn=cmd_rl_train)

    sp = sub.add_parser("evaluate", help="closed-loop average reward of an actor")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--reward", required=True)
    sp.add_argument("--ticks", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("report", help="figure-data tables from run directories")
    common(sp, seeded=False)
    sp.add_argument("--runs", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("serve", help="session service for the teach console")
    common(sp, seeded=False)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8008)
    sp.add_argument("--static", default=None, help="console assets directory")
    sp.add_argument("--export-root", default="exports")
    sp.add_argument("--demo-training", action="store_true",
                    help="run a background RL loop for spectators")
    sp.add_argument("--reward", default=None,
                    help="reward artifact for --demo-training")
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    _limit_blas_threads()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (PipelineError, DatasetError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingDiverged,) as e:
        print(f"training failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
