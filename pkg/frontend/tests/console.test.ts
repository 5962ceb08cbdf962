import { beforeEach, describe, expect, it, vi } from "vitest";

import {
  MetricSeries,
  PixelSurface,
  SocketLike,
  TeachConsole,
  plotSeries,
  scaledCanvasSize,
  type LineContext,
  type Mode,
} from "../src/console.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closedByClient = false;
  onmessage: ((data: string) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.closedByClient = true;
    this.onclose?.();
  }
  open(): void {
    this.onopen?.();
  }
  deliver(obj: unknown): void {
    this.onmessage?.(JSON.stringify(obj));
  }
  dropFromServer(): void {
    this.onclose?.();
  }
  actions(): { tick: number; key: string }[] {
    return this.sent
      .map((s) => JSON.parse(s))
      .filter((m) => m.type === "action");
  }
}

class FakeSurface implements PixelSurface {
  frames: { w: number; h: number }[] = [];
  tints: boolean[] = [];
  overlays: string[] = [];

  drawFrame(px: Uint8Array, w: number, h: number): void {
    this.frames.push({ w, h });
  }
  setBorderTint(on: boolean): void {
    this.tints.push(on);
  }
  setOverlay(text: string): void {
    this.overlays.push(text);
  }
}

function framePayload(tick: number, w = 64, h = 48): object {
  const bytes = Buffer.alloc(w * h * 3, tick % 256);
  return { type: "frame", tick, w, h, px: bytes.toString("base64") };
}

function makeConsole(mode: Mode) {
  const sockets: FakeSocket[] = [];
  const surface = new FakeSurface();
  const reconnects: (() => void)[] = [];
  const console_ = new TeachConsole({
    mode,
    surface,
    connect: () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    scheduleReconnect: (fn) => reconnects.push(fn),
  });
  console_.start();
  sockets[0].open();
  return { console_, sockets, surface, reconnects };
}

describe("frame handling", () => {
  it("scales 48x64 by 8 to a 384x512 canvas region", () => {
    expect(scaledCanvasSize(64, 48, 8)).toEqual({ width: 512, height: 384 });
  });

  it("ignores out-of-order frames", () => {
    const { console_, sockets, surface } = makeConsole("spectate");
    sockets[0].deliver(framePayload(5));
    sockets[0].deliver(framePayload(3));
    sockets[0].deliver(framePayload(5));
    expect(surface.frames.length).toBe(1);
    expect(console_.state.lastTick).toBe(5);
  });

  it("drops frames whose payload length is wrong and counts them", () => {
    const { console_, sockets, surface } = makeConsole("spectate");
    const bad = { ...framePayload(1), px: Buffer.alloc(10).toString("base64") };
    sockets[0].deliver(bad);
    expect(surface.frames.length).toBe(0);
    expect(console_.state.droppedMessages).toBe(1);
  });

  it("drops malformed JSON with a counter", () => {
    const { console_ } = makeConsole("spectate");
    console_.handleMessage("{not json");
    expect(console_.state.droppedMessages).toBe(1);
  });

  it("shows the scalar badge when the frame carries a value", () => {
    const { sockets, surface } = makeConsole("label-reward");
    sockets[0].deliver({ ...framePayload(1), value: 0.73 });
    expect(surface.overlays[0]).toContain("0.73");
  });
});

describe("input capture", () => {
  it("emits one action per received tick while a key is held", () => {
    const { console_, sockets } = makeConsole("demo");
    console_.keyDown("ArrowLeft");
    for (let t = 0; t < 10; t++) sockets[0].deliver(framePayload(t));
    const actions = sockets[0].actions();
    expect(actions.length).toBe(10);
    expect(actions.every((a) => a.key === "left")).toBe(true);
    expect(actions.map((a) => a.tick)).toEqual([...Array(10).keys()]);
  });

  it("sends none when both arrows are held (conflict rule)", () => {
    const { console_, sockets } = makeConsole("demo");
    console_.keyDown("ArrowLeft");
    console_.keyDown("ArrowRight");
    sockets[0].deliver(framePayload(0));
    expect(sockets[0].actions()[0].key).toBe("none");
  });

  it("sends a single +1 label when G is pressed in label mode", () => {
    const { console_, sockets } = makeConsole("label-safety");
    sockets[0].deliver(framePayload(4));
    console_.keyDown("g");
    const labels = sockets[0].sent.map((s) => JSON.parse(s)).filter((m) => m.type === "label");
    expect(labels).toEqual([{ type: "label", tick: 4, value: 1 }]);
    expect(console_.state.activeLabel).toBe(1);
    console_.keyDown("B");
    expect(console_.state.activeLabel).toBe(-1);
  });

  it("does not emit actions in label mode", () => {
    const { console_, sockets } = makeConsole("label-reward");
    console_.keyDown("ArrowLeft");
    sockets[0].deliver(framePayload(0));
    expect(sockets[0].actions().length).toBe(0);
  });
});

describe("metrics plotting", () => {
  function epochMsg(epoch: number) {
    return {
      type: "metrics",
      epoch,
      avg_reward: epoch / 10,
      avg_action_value: epoch / 5,
      accidents: 1,
      takeover_fraction: 0.5 / (epoch + 1),
      restarts: 0,
    };
  }

  it("appends one point per series per epoch message", () => {
    const { console_, sockets } = makeConsole("spectate");
    for (let e = 0; e < 10; e++) sockets[0].deliver(epochMsg(e));
    const s = console_.state.series;
    expect(s.reward.length).toBe(10);
    expect(s.actionValue.length).toBe(10);
    expect(s.takeover.length).toBe(10);
  });

  it("tints the border exactly between takeover on/off", () => {
    const { console_, sockets, surface } = makeConsole("spectate");
    sockets[0].deliver({ type: "takeover", tick: 7, on: true });
    expect(console_.state.takeoverActive).toBe(true);
    sockets[0].deliver({ type: "takeover", tick: 9, on: false });
    expect(surface.tints).toEqual([true, false]);
    expect(console_.state.takeoverActive).toBe(false);
  });

  it("plotSeries draws three labelled panels", () => {
    const calls: string[] = [];
    const ctx: LineContext = {
      clear: () => calls.push("clear"),
      polyline: (_pts, color) => calls.push(`line:${color}`),
      text: (s) => calls.push(`text:${s}`),
    };
    const series: MetricSeries = {
      reward: [{ x: 0, y: 0.1 }, { x: 1, y: 0.2 }],
      actionValue: [{ x: 0, y: 1 }],
      takeover: [],
    };
    plotSeries(ctx, series, 200, 150);
    expect(calls.filter((c) => c.startsWith("text")).length).toBe(3);
    expect(calls.filter((c) => c.startsWith("line")).length).toBe(2);
  });
});

describe("B2: console loop against a scripted server", () => {
  it("10 Hz for 60 s: one action per tick, no monotonicity violations, reconnect resumes", () => {
    vi.useFakeTimers();
    const { console_, sockets, reconnects } = makeConsole("demo");
    console_.keyDown("ArrowRight");
    const server = sockets[0];
    let violations = 0;
    let prevTick = -1;
    for (let t = 0; t < 600; t++) {
      vi.advanceTimersByTime(100); // scripted 10 Hz cadence
      server.deliver(framePayload(t));
      if (console_.state.lastTick <= prevTick) violations++;
      prevTick = console_.state.lastTick;
    }
    const actions = server.actions();
    expect(actions.length).toBe(600); // exactly one per tick: no bursts, no gaps
    expect(new Set(actions.map((a) => a.tick)).size).toBe(600);
    expect(violations).toBe(0);

    // metrics arrive, server drops the connection, client reconnects,
    // the server replays history and the series resume
    server.deliver({
      type: "metrics", epoch: 0, avg_reward: 0.1, avg_action_value: 0.2,
      accidents: 3, takeover_fraction: 0.4, restarts: 1,
    });
    expect(console_.state.series.reward.length).toBe(1);
    server.dropFromServer();
    expect(console_.state.connection).toBe("closed");
    expect(reconnects.length).toBe(1);
    reconnects[0]();
    const second = sockets[1];
    second.open();
    expect(console_.state.series.reward.length).toBe(0); // cleared, awaiting replay
    for (let e = 0; e < 2; e++) {
      second.deliver({
        type: "metrics", epoch: e, avg_reward: e, avg_action_value: e,
        accidents: 0, takeover_fraction: 0, restarts: 0,
      });
    }
    expect(console_.state.series.reward.map((p) => p.x)).toEqual([0, 1]);
    vi.useRealTimers();
  });
});
