"""Real-time session service: streams frames, ingests actions and labels,
exports recorded sessions as standard datasets, and relays live training
metrics to spectators.

Transport: one WebSocket per session carrying JSON text messages.

* server to client: ``frame`` (tick, w, h, base64 u8 RGB, optional value),
  ``metrics`` (epoch record), ``takeover`` (tick, on), ``event`` (kind).
* client to server: ``action`` (tick, key), ``label`` (tick, value),
  ``close``.

Control plane: POST /sessions, DELETE /sessions/:id,
GET /sessions/:id/export, GET /health.

Driving sessions pace themselves at ``tick_hz``; ``lockstep`` (demo mode)
instead gates every tick on client input, which makes tape replays exact.
"""

from __future__ import annotations

import asyncio
import base64
import itertools
import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .data import DemoDataset, LabeledDataset, save_dataset
from .pipeline import render_config, sim_config
from .rl import EpochMetrics, RunListeners
from .sim import ACTION_NAMES, NO_ACTION, FrameRing, TrackError, World, load_track
from .teachers import LaneSweepDriver

STALE_WINDOW = 10
DRIVING_MODES = ("demo", "label-reward", "label-safety")
MODES = DRIVING_MODES + ("spectate",)
KEY_TO_ACTION = {"none": 0, "left": 1, "right": 2}


class TrainerBus(RunListeners):
    """Publish-only bridge from a training loop to spectator sessions.

    Epoch metrics are kept as replayable history; frames are fan-out with
    per-spectator bounded queues (backpressure drops spectator frames, never
    trainer state).
    """

    def __init__(self, frame_queue_size: int = 4) -> None:
        self.history: list[EpochMetrics] = []
        self._spectators: dict[int, asyncio.Queue] = {}
        self._ids = itertools.count()
        self._lock = threading.Lock()
        self.frame_queue_size = frame_queue_size

    def subscribe(self) -> tuple[int, asyncio.Queue]:
        q: asyncio.Queue = asyncio.Queue(maxsize=64)
        with self._lock:
            sid = next(self._ids)
            self._spectators[sid] = q
        return sid, q

    def unsubscribe(self, sid: int) -> None:
        with self._lock:
            self._spectators.pop(sid, None)

    def _offer(self, payload: dict, droppable: bool) -> None:
        with self._lock:
            targets = list(self._spectators.values())
        for q in targets:
            try:
                q.put_nowait(payload)
            except asyncio.QueueFull:
                if not droppable:
                    try:  # drop one old frame to make room for trainer state
                        q.get_nowait()
                        q.put_nowait(payload)
                    except (asyncio.QueueEmpty, asyncio.QueueFull):
                        pass

    # RunListeners interface (called from the trainer thread)
    def on_epoch(self, m: EpochMetrics) -> None:
        with self._lock:
            self.history.append(m)
        self._offer({"type": "metrics", **m.__dict__}, droppable=False)

    def on_takeover(self, tick: int, active: bool) -> None:
        self._offer({"type": "takeover", "tick": tick, "on": active}, droppable=False)

    def on_frame(self, tick: int, frame_hwc_u8: np.ndarray, takeover: bool) -> None:
        h, w, _ = frame_hwc_u8.shape
        self._offer({"type": "frame", "tick": tick, "w": w, "h": h,
                     "px": base64.b64encode(frame_hwc_u8.tobytes()).decode()},
                    droppable=True)

    def on_event(self, kind: str, tick: int) -> None:
        self._offer({"type": "event", "kind": kind, "tick": tick}, droppable=False)


class Session:
    def __init__(self, session_id: str, mode: str, track_name: str, cfg: dict,
                 tick_hz: float, lockstep: bool, seed: int = 0) -> None:
        self.id = session_id
        self.mode = mode
        self.track_name = track_name
        self.state = "active"
        self.tick = 0
        self.stale_drops = 0
        self.invalid_messages = 0
        self.tick_hz = tick_hz
        self.lockstep = lockstep
        self.frames: list[np.ndarray] = []   # HWC u8 per tick
        self.actions: list[int] = []
        self.labels: list[int | None] = []
        if mode in DRIVING_MODES:
            track = load_track(track_name)
            self.render_cfg = render_config(cfg)
            self.world = World(track, sim_config(cfg))
            self.ring = FrameRing(self.render_cfg)
            self.driver = LaneSweepDriver()
            self.rng = np.random.default_rng(seed)
            self.edge_bias = cfg["labels"]["edge_bias"]
        self._scheduled_actions: dict[int, int] = {}
        self._scheduled_labels: dict[int, int] = {}
        self._held_action = NO_ACTION
        self._held_label: int | None = None

    def close(self) -> None:
        self.state = "closed"

    # -- input ingestion ----------------------------------------------------

    def ingest(self, msg: dict) -> dict | None:
        """Apply one client message; returns an event payload on rejection."""
        kind = msg.get("type")
        if kind == "action":
            if self.mode != "demo":
                self.invalid_messages += 1
                return {"type": "event", "kind": "action_rejected", "tick": self.tick}
            key = msg.get("key")
            tick = int(msg.get("tick", self.tick))
            if key not in KEY_TO_ACTION:
                self.invalid_messages += 1
                return {"type": "event", "kind": "unknown_key", "tick": self.tick}
            if tick < self.tick - STALE_WINDOW:
                self.stale_drops += 1
                return {"type": "event", "kind": "stale_dropped", "tick": tick}
            self._scheduled_actions[max(tick, self.tick)] = KEY_TO_ACTION[key]
            return None
        if kind == "label":
            if self.mode not in ("label-reward", "label-safety"):
                self.invalid_messages += 1
                return {"type": "event", "kind": "label_rejected", "tick": self.tick}
            value = msg.get("value")
            if value not in (-1, 1):
                self.invalid_messages += 1
                return {"type": "event", "kind": "invalid_label", "tick": self.tick}
            tick = int(msg.get("tick", self.tick))
            if tick < self.tick - STALE_WINDOW:
                self.stale_drops += 1
                return {"type": "event", "kind": "stale_dropped", "tick": tick}
            self._scheduled_labels[max(tick, self.tick)] = int(value)
            return None
        self.invalid_messages += 1
        return {"type": "event", "kind": "unknown_message", "tick": self.tick}

    def _effective_action(self) -> int:
        # most recent schedule entry at or before the current tick wins;
        # otherwise the previous key stays pressed (key-hold semantics)
        due = [t for t in self._scheduled_actions if t <= self.tick]
        if due:
            self._held_action = self._scheduled_actions[max(due)]
            for t in due:
                del self._scheduled_actions[t]
        return self._held_action

    def _effective_label(self) -> int | None:
        due = [t for t in self._scheduled_labels if t <= self.tick]
        if due:
            self._held_label = self._scheduled_labels[max(due)]
            for t in due:
                del self._scheduled_labels[t]
        return self._held_label

    def has_input_for_tick(self) -> bool:
        return any(t <= self.tick for t in self._scheduled_actions)

    # -- one simulator tick ---------------------------------------------------

    def advance(self) -> dict:
        frame = self.ring.push_world(self.world)
        self.frames.append(frame)
        if self.mode == "demo":
            action = self._effective_action()
        else:
            action = self._label_mode_drive()
            self.labels.append(self._effective_label())
        if self.mode == "demo":
            self.actions.append(action)
        self.world.step(action)
        h, w, _ = frame.shape
        payload = {"type": "frame", "tick": self.tick, "w": w, "h": h,
                   "px": base64.b64encode(frame.tobytes()).decode()}
        self.tick += 1
        return payload

    def _label_mode_drive(self) -> int:
        from .teachers import _BLOCK_TICKS, steer_toward

        if self.tick % _BLOCK_TICKS == 0:
            if self.rng.random() < self.edge_bias:
                side = 1.0 if self.rng.random() < 0.5 else -1.0
                self._excursion = side * (self.world.track.half_width
                                          + self.rng.uniform(0.5, 2.0))
            else:
                self._excursion = None
        if getattr(self, "_excursion", None) is not None:
            return steer_toward(self.world, self._excursion, psi_cap=0.8)
        return self.driver.act(self.world, self.ring.observation_hwc_u8(), self.rng)

    # -- export -----------------------------------------------------------

    def export(self, out_dir: Path):
        if self.state != "closed":
            raise HTTPException(409, "session must be closed before export")
        meta = {"track": self.track_name, "provenance": f"session:{self.id}",
                "seed": 0, "stale_drops": self.stale_drops}
        if self.mode == "demo":
            if not self.frames:
                raise HTTPException(400, "empty session")
            frames = np.stack([f.transpose(2, 0, 1) for f in self.frames])
            ds = DemoDataset(frames=frames, gap_ticks=self.render_cfg.gap_ticks,
                             meta=meta, actions=np.array(self.actions, dtype=np.int8))
        else:
            keep = [i for i, v in enumerate(self.labels) if v is not None]
            if not keep:
                raise HTTPException(400, "no labeled frames to export")
            frames = np.stack([self.frames[i].transpose(2, 0, 1) for i in keep])
            labels = np.array([self.labels[i] for i in keep], dtype=np.int8)
            channel = "reward" if self.mode == "label-reward" else "safety"
            ds = LabeledDataset(frames=frames, gap_ticks=self.render_cfg.gap_ticks,
                                meta=meta, labels=labels, channel=channel)
        save_dataset(out_dir, ds)
        return {"path": str(out_dir), "count": len(ds), "mode": self.mode}


def create_app(cfg: dict, export_root: Path = Path("exports"),
               static_dir: Path | None = None, bus: TrainerBus | None = None) -> FastAPI:
    app = FastAPI(title="steerlab session service")
    app.state.sessions: dict[str, Session] = {}
    app.state.bus = bus or TrainerBus()
    app.state.export_root = Path(export_root)
    counter = itertools.count(1)

    def active_driving() -> Session | None:
        for s in app.state.sessions.values():
            if s.mode in DRIVING_MODES and s.state == "active":
                return s
        return None

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(app.state.sessions)}

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        mode = body.get("mode")
        if mode not in MODES:
            raise HTTPException(400, f"unknown mode {mode!r}")
        if mode in DRIVING_MODES:
            conflict = active_driving()
            if conflict is not None:
                raise HTTPException(
                    409, f"driving session {conflict.id} already active")
        track = body.get("track", cfg["track"])
        session_id = f"s{next(counter)}"
        try:
            session = Session(session_id, mode, track, cfg,
                              tick_hz=float(body.get("tick_hz", 10.0)),
                              lockstep=bool(body.get("lockstep", False)),
                              seed=int(body.get("seed", 0)))
        except TrackError as e:
            raise HTTPException(400, str(e)) from e
        app.state.sessions[session_id] = session
        return {"id": session_id, "mode": mode, "track": track}

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        session = app.state.sessions.pop(session_id, None)
        if session is None:
            raise HTTPException(404, "no such session")
        session.close()
        return {"id": session_id, "state": "closed"}

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str):
        session = app.state.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, "no such session")
        out = app.state.export_root / session_id
        return session.export(out)

    @app.websocket("/sessions/{session_id}/ws")
    async def session_ws(ws: WebSocket, session_id: str):
        session = app.state.sessions.get(session_id)
        if session is None:
            await ws.close(code=4404)
            return
        await ws.accept()
        if session.mode == "spectate":
            await _run_spectator(app.state.bus, ws)
        else:
            await _run_driving(session, ws)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app


async def _pump_inbound(session: Session, ws: WebSocket, queue: asyncio.Queue):
    try:
        while True:
            raw = await ws.receive_text()
            try:
                msg = json.loads(raw)
            except json.JSONDecodeError:
                session.invalid_messages += 1
                continue
            await queue.put(msg)
            if msg.get("type") == "close":
                return
    except WebSocketDisconnect:
        await queue.put({"type": "close"})


async def _run_driving(session: Session, ws: WebSocket) -> None:
    queue: asyncio.Queue = asyncio.Queue()
    pump = asyncio.create_task(_pump_inbound(session, ws, queue))
    interval = 1.0 / session.tick_hz if session.tick_hz > 0 else 0.0
    try:
        loop = asyncio.get_running_loop()
        next_deadline = loop.time() + interval
        while session.state == "active":
            # drain pending input; in lockstep demo mode, block until the
            # current tick has an action (exact tape replay)
            while True:
                try:
                    msg = queue.get_nowait()
                except asyncio.QueueEmpty:
                    if session.lockstep and session.mode == "demo" \
                            and not session.has_input_for_tick():
                        msg = await queue.get()
                    else:
                        break
                if msg.get("type") == "close":
                    session.close()
                    break
                reply = session.ingest(msg)
                if reply is not None:
                    await ws.send_text(json.dumps(reply))
            if session.state != "active":
                break
            payload = session.advance()
            await ws.send_text(json.dumps(payload))
            if interval > 0:
                now = loop.time()
                delay = next_deadline - now
                next_deadline += interval
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_deadline = now + interval  # missed the slot; resync
    except WebSocketDisconnect:
        session.close()
    finally:
        session.close()
        pump.cancel()
        try:
            await ws.close()
        except Exception:
            pass


async def _run_spectator(bus: TrainerBus, ws: WebSocket) -> None:
    sid, queue = bus.subscribe()
    try:
        for m in list(bus.history):  # replay so reconnecting clients resume
            await ws.send_text(json.dumps({"type": "metrics", **m.__dict__}))
        recv = asyncio.create_task(ws.receive_text())
        while True:
            get = asyncio.create_task(queue.get())
            done, pending = await asyncio.wait(
                {recv, get}, return_when=asyncio.FIRST_COMPLETED)
            if recv in done:
                get.cancel()
                try:
                    msg = json.loads(recv.result())
                except (json.JSONDecodeError, WebSocketDisconnect):
                    break
                if msg.get("type") == "close":
                    break
                recv = asyncio.create_task(ws.receive_text())
            if get in done:
                await ws.send_text(json.dumps(get.result()))
    except WebSocketDisconnect:
        pass
    finally:
        bus.unsubscribe(sid)
        try:
            await ws.close()
        except Exception:
            pass
