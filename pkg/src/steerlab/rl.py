"""Double deep Q-learning with replay memory, IL initialization, the
frozen-trunk policy-evaluation phase, optional safety gating, and per-epoch
metrics.

The learner itself is environment-agnostic (the tabular tests drive it with
one-hot vectors); ``rl_train`` wires it to the driving world, the reward
net and the safety module.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .imitation import TRUNK_LAYER_COUNT, act_hwc, policy_layer_specs
from .safety import AGENT_CONTROL, SAFE_CONTROL, SafetyModule
from .sim import NO_ACTION, FrameRing, RenderConfig, StepEvents, World

__all__ = ["RLConfig", "Transition", "ReplayBuffer", "EpochMetrics", "DdqnLearner",
           "build_q_net", "il_initialize", "policy_evaluation_phase", "select_action",
           "ddqn_targets", "rl_train", "count_accidents", "RLDiverged",
           "metrics_to_json", "metrics_from_json", "TickEvents"]


@dataclass(frozen=True)
class RLConfig:
    gamma: float = 0.9
    epsilon: float = 0.05
    batch_size: int = 32
    target_sync_period: int = 300      # gradient updates between hard syncs
    epoch_frames: int = 2000           # desk-scale epoch (paper scale: 15,000)
    total_frames: int = 120_000
    replay_capacity: int = 5000
    latency_ticks: int = 0
    safety_enabled: bool = False
    init_mode: str = "il"              # random | il | il+policy_eval
    lr: float = 1e-4
    train_period: int = 8              # env ticks between gradient updates
    min_buffer: int = 500
    policy_eval_frames: int = 4000
    final_layer_init_range: float = 1e-3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.epoch_frames < self.batch_size:
            raise ValueError("epoch_frames must be >= batch_size")
        if self.init_mode not in ("random", "il", "il+policy_eval"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


@dataclass
class TickEvents:
    """Per-tick event record: world events plus the safety timeout flag."""

    off_road_entry: bool = False
    on_road_entry: bool = False
    restart_stuck: bool = False
    restart_wrong_direction: bool = False
    takeover_timeout: bool = False

    @classmethod
    def from_step(cls, ev: StepEvents, takeover_timeout: bool = False) -> "TickEvents":
        return cls(ev.off_road_entry, ev.on_road_entry, ev.restart_stuck,
                   ev.restart_wrong_direction, takeover_timeout)

    @property
    def restarted(self) -> bool:
        return (self.restart_stuck or self.restart_wrong_direction
                or self.takeover_timeout)


def count_accidents(events) -> int:
    """Accidents = off-road entries + forced restarts (+ takeover timeouts)."""
    total = 0
    for ev in events:
        total += int(ev.off_road_entry) + int(ev.restart_stuck) \
            + int(ev.restart_wrong_direction) + int(getattr(ev, "takeover_timeout", False))
    return total


@dataclass
class EpochMetrics:
    epoch: int
    avg_reward: float
    avg_action_value: float
    accidents: int
    takeover_fraction: float
    restarts: int
    wall_ms: float = 0.0


def metrics_to_json(m: EpochMetrics) -> str:
    return json.dumps(asdict(m), sort_keys=True)


def metrics_from_json(line: str) -> EpochMetrics:
    return EpochMetrics(**json.loads(line))


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform sampling.

    Storage is preallocated on first push and keeps the observation dtype
    (u8 image observations are dequantized at sampling time).
    """

    def __init__(self, capacity: int = 5000) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.insertions = 0
        self._s = self._s2 = self._a = self._r = self._t = None

    def __len__(self) -> int:
        return min(self.insertions, self.capacity)

    def _alloc(self, obs: np.ndarray) -> None:
        shape = (self.capacity,) + obs.shape
        self._s = np.empty(shape, dtype=obs.dtype)
        self._s2 = np.empty(shape, dtype=obs.dtype)
        self._a = np.empty(self.capacity, dtype=np.int8)
        self._r = np.empty(self.capacity, dtype=np.float32)
        self._t = np.empty(self.capacity, dtype=bool)

    def push(self, s: np.ndarray, a: int, r: float, s_next: np.ndarray,
             terminal: bool) -> None:
        if self._s is None:
            self._alloc(np.asarray(s))
        i = self.insertions % self.capacity
        self._s[i] = s
        self._a[i] = a
        self._r[i] = r
        self._s2[i] = s_next
        self._t[i] = terminal
        self.insertions += 1

    def push_transition(self, tr: Transition) -> None:
        self.push(tr.s, tr.a, tr.r, tr.s_next, tr.terminal)

    def sample(self, batch: int, rng: np.random.Generator):
        n = len(self)
        if n < batch:
            raise ValueError(f"buffer holds {n} < batch {batch}")
        idx = rng.integers(0, n, size=batch)
        s, s2 = self._s[idx], self._s2[idx]
        if s.dtype == np.uint8:
            s = s.astype(np.float32) / 255.0
            s2 = s2.astype(np.float32) / 255.0
        return s, self._a[idx].astype(np.int64), self._r[idx].astype(np.float64), \
            s2, self._t[idx]

    def stored_transitions(self) -> list[Transition]:
        n = len(self)
        start = self.insertions - n
        out = []
        for k in range(n):
            i = (start + k) % self.capacity
            out.append(Transition(self._s[i], int(self._a[i]), float(self._r[i]),
                                  self._s2[i], bool(self._t[i])))
        return out


def build_q_net(input_shape: tuple[int, int, int] = (6, 48, 64), seed: int = 0,
                dropout: float = 0.5) -> nn.Network:
    """Policy topology with the final softmax removed (unbounded action values)."""
    specs = policy_layer_specs(dropout)[:-1]
    return nn.build_network(specs, input_shape, seed=seed)


def il_initialize(policy: nn.Network, seed: int = 0,
                  init_range: float = 1e-3) -> nn.Network:
    """Q-net from the imitation policy: all parameters copied except the
    final layer's, which are drawn uniformly in +/-init_range."""
    q = build_q_net(policy.input_shape, seed=seed,
                    dropout=next((s["rate"] for s in policy.spec()
                                  if s["kind"] == "dropout"), 0.5))
    if policy.spec()[:-1] != q.spec() or policy.spec()[-1] != {"kind": "softmax"}:
        raise nn.LayerError("policy topology does not match the Q template "
                            "(expected the policy stack ending in softmax)")
    final_dense = max(i for i, layer in enumerate(q.layers) if layer.params)
    for i, layer in enumerate(q.layers):
        if not layer.params:
            continue
        if i == final_dense:
            rng = np.random.default_rng(seed)
            for p in layer.params:
                p[...] = rng.uniform(-init_range, init_range, size=p.shape)
        else:
            for dst, src in zip(layer.params, policy.layers[i].params):
                dst[...] = src
    return q


def select_action(q: nn.Network, obs_hwc: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over the online net (ties to the lowest action index)."""
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(0, 3))
    return act_hwc(q, obs_hwc)


def ddqn_targets(batch, q: nn.Network, q_target: nn.Network,
                 gamma: float) -> np.ndarray:
    """Bootstrap targets with online argmax and frozen-copy evaluation.

    ``batch`` is either a list of Transitions or an (s2, r, terminal) tuple
    of arrays in the networks' internal layout.
    """
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Transition):
        s2 = np.stack([np.asarray(tr.s_next) for tr in batch])
        if s2.dtype == np.uint8:
            s2 = s2.astype(np.float32) / 255.0
        else:
            s2 = s2.astype(np.float32)
        r = np.array([tr.r for tr in batch], dtype=np.float64)
        terminal = np.array([tr.terminal for tr in batch])
    else:
        s2, r, terminal = batch
    if len(r) == 0:
        raise ValueError("empty batch")
    a_star = np.argmax(q.forward_internal(s2, train=False), axis=1)
    q_next = q_target.forward_internal(s2, train=False)
    boot = q_next[np.arange(len(r)), a_star]
    return r + gamma * boot * (~np.asarray(terminal)).astype(np.float64)


class RunListeners:
    """Publish-only observer hooks; consumers never mutate trainer state."""

    def on_epoch(self, metrics: EpochMetrics) -> None:
        pass

    def on_takeover(self, tick: int, active: bool) -> None:
        pass

    def on_frame(self, tick: int, frame_hwc_u8: np.ndarray, takeover: bool) -> None:
        pass

    def on_event(self, kind: str, tick: int) -> None:
        pass


class RLDiverged(RuntimeError):
    """Raised on non-finite loss; carries the last healthy parameter snapshot."""

    def __init__(self, msg: str, checkpoint: list[np.ndarray],
                 metrics: list[EpochMetrics]) -> None:
        super().__init__(msg)
        self.checkpoint = checkpoint
        self.metrics = metrics


class DdqnLearner:
    """Online net, frozen target copy, replay buffer and the update rule."""

    def __init__(self, q: nn.Network, cfg: RLConfig) -> None:
        self.q = q
        self.cfg = cfg
        self.target = q.clone()
        self.buffer = ReplayBuffer(cfg.replay_capacity)
        self.adam = nn.AdamState(q, lr=cfg.lr)
        self.updates = 0
        self.frozen_trunk = False

    def q_values_hwc(self, obs_hwc: np.ndarray) -> np.ndarray:
        return self.q.forward_internal(obs_hwc[None], train=False)[0]

    def select(self, obs_hwc: np.ndarray, rng: np.random.Generator,
               epsilon: float | None = None) -> int:
        eps = self.cfg.epsilon if epsilon is None else epsilon
        return select_action(self.q, obs_hwc, eps, rng)

    def sync_target(self) -> None:
        self.target.set_parameters(self.q.parameters())

    def train_step(self, rng: np.random.Generator) -> float | None:
        cfg = self.cfg
        if len(self.buffer) < max(cfg.batch_size, cfg.min_buffer):
            return None
        s, a, r, s2, terminal = self.buffer.sample(cfg.batch_size, rng)
        targets = ddqn_targets((s2, r, terminal), self.q, self.target, cfg.gamma)
        out = self.q.forward_internal(s, train=True)
        chosen = out[np.arange(len(a)), a]
        diff = chosen - targets
        loss = float(np.mean(diff * diff))
        grad = np.zeros_like(out)
        grad[np.arange(len(a)), a] = (2.0 * diff / len(a)).astype(out.dtype)
        self.q.backward(grad)
        if self.frozen_trunk:
            for layer in self.q.layers[:TRUNK_LAYER_COUNT]:
                layer.zero_grads()
        nn.adam_step(self.q, self.adam)
        self.updates += 1
        if self.updates % cfg.target_sync_period == 0:
            self.sync_target()
        return loss


def _obs_f32(ring: FrameRing) -> np.ndarray:
    return ring.observation_hwc_u8().astype(np.float32) / 255.0


def policy_evaluation_phase(learner: DdqnLearner, actor: nn.Network, world: World,
                            frames: int, reward_net: nn.Network,
                            render_cfg: RenderConfig,
                            rng: np.random.Generator) -> None:
    """Let the imitation policy drive while only the two dense layers of the
    Q-net learn (conv trunk frozen); fills the replay buffer as a side effect."""
    if frames <= 0:
        return
    learner.frozen_trunk = True
    ring = FrameRing(render_cfg)
    ring.push_world(world)
    obs_u8 = ring.observation_hwc_u8()
    for frame in range(frames):
        a = act_hwc(actor, obs_u8.astype(np.float32) / 255.0)
        ev = world.step(a)
        ring.push_world(world)
        obs2_u8 = ring.observation_hwc_u8()
        r = float(reward_net.forward_internal(
            obs2_u8[None].astype(np.float32) / 255.0, train=False)[0, 0])
        learner.buffer.push(obs_u8, a, r, obs2_u8, ev.restarted)
        if (frame + 1) % learner.cfg.train_period == 0:
            learner.train_step(rng)
        obs_u8 = obs2_u8
    learner.frozen_trunk = False
    learner.sync_target()


class _LatencyLine:
    """Actuation delay: the key chosen now begins pressing latency ticks later;
    meanwhile the previous key stays pressed."""

    def __init__(self, latency: int) -> None:
        self._queue = [NO_ACTION] * max(0, latency)

    def exchange(self, action: int) -> int:
        if not self._queue:
            return action
        self._queue.append(action)
        return self._queue.pop(0)


def rl_train(cfg: RLConfig, world: World, reward_net: nn.Network,
             safety: SafetyModule | None, q_init: nn.Network,
             render_cfg: RenderConfig = RenderConfig(),
             listeners: RunListeners | None = None,
             learner: DdqnLearner | None = None,
             measure_net: nn.Network | None = None
             ) -> tuple[nn.Network, list[EpochMetrics]]:
    """Main RL loop: observe, gate, act, step, learn, and report per epoch.

    A pre-warmed learner (from the policy-evaluation phase) may be passed in
    to keep its replay buffer; otherwise one is built around ``q_init``.
    ``measure_net`` reports epoch rewards on a different scorer than the one
    training uses (the reduced-data reward ablation is judged by the full
    reward net while learning from the reduced one).
    """
    if cfg.safety_enabled and safety is None:
        raise ValueError("safety_enabled requires a SafetyModule")
    safety = safety if cfg.safety_enabled else None
    rng = np.random.default_rng(cfg.seed)
    if learner is None:
        learner = DdqnLearner(q_init, cfg)
    line = _LatencyLine(cfg.latency_ticks)

    ring = FrameRing(render_cfg)
    ring.push_world(world)
    obs = _obs_f32(ring)
    obs_u8 = ring.observation_hwc_u8()

    metrics: list[EpochMetrics] = []
    control = AGENT_CONTROL
    streak = 0
    takeover_len = 0
    ep_reward = ep_qmax = 0.0
    ep_accidents = ep_restarts = ep_safe_ticks = 0
    epoch_started = time.perf_counter()
    healthy = learner.q.snapshot()

    for frame in range(cfg.total_frames):
        tick = frame
        q_vals = learner.q_values_hwc(obs)
        ep_qmax += float(np.max(q_vals))

        if safety is not None and control == AGENT_CONTROL:
            if safety.score_hwc(obs) <= safety.threshold:
                control = SAFE_CONTROL
                streak = 0
                takeover_len = 0
                if listeners is not None:
                    listeners.on_takeover(tick, True)
        if control == SAFE_CONTROL:
            a = act_hwc(safety.safe_policy, obs)
            ep_safe_ticks += 1
        else:
            a = int(rng.integers(0, 3)) if (cfg.epsilon > 0 and rng.random() < cfg.epsilon) \
                else int(np.argmax(q_vals))
        exec_a = line.exchange(a)

        ev = world.step(exec_a)
        ring.push_world(world)
        events = TickEvents.from_step(ev)
        obs2 = _obs_f32(ring)
        r = float(reward_net.forward_internal(obs2[None], train=False)[0, 0])
        r_measured = r if measure_net is None else float(
            measure_net.forward_internal(obs2[None], train=False)[0, 0])

        if control == SAFE_CONTROL:
            takeover_len += 1
            if safety.score_hwc(obs2) > safety.threshold:
                streak += 1
                if streak > safety.hysteresis_ticks:
                    control = AGENT_CONTROL
                    if listeners is not None:
                        listeners.on_takeover(tick, False)
            else:
                streak = 0
            if control == SAFE_CONTROL and takeover_len >= safety.max_takeover_ticks:
                events.takeover_timeout = True
                world.reset()
                ring.push_world(world)
                obs2 = _obs_f32(ring)
                control = AGENT_CONTROL
                if listeners is not None:
                    listeners.on_takeover(tick, False)
                    listeners.on_event("takeover_timeout", tick)

        terminal = events.restarted
        obs2_u8 = ring.observation_hwc_u8()
        learner.buffer.push(obs_u8, exec_a, r, obs2_u8, terminal)

        if (frame + 1) % cfg.train_period == 0:
            loss = learner.train_step(rng)
            if loss is not None and not np.isfinite(loss):
                raise RLDiverged(f"non-finite loss at frame {frame}", healthy, metrics)

        ep_reward += r_measured
        ep_accidents += count_accidents([events])
        ep_restarts += int(events.restarted)
        if listeners is not None:
            listeners.on_frame(tick, ring.latest(), control == SAFE_CONTROL)

        obs = obs2
        obs_u8 = obs2_u8

        if (frame + 1) % cfg.epoch_frames == 0:
            n = cfg.epoch_frames
            m = EpochMetrics(
                epoch=len(metrics),
                avg_reward=ep_reward / n,
                avg_action_value=ep_qmax / n,
                accidents=ep_accidents,
                takeover_fraction=(ep_safe_ticks / n) if safety is not None else 0.0,
                restarts=ep_restarts,
                wall_ms=(time.perf_counter() - epoch_started) * 1000.0,
            )
            metrics.append(m)
            if listeners is not None:
                listeners.on_epoch(m)
            healthy = learner.q.snapshot()
            ep_reward = ep_qmax = 0.0
            ep_accidents = ep_restarts = ep_safe_ticks = 0
            epoch_started = time.perf_counter()

    return learner.q, metrics
