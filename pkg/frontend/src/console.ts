// Teach console core: frame rendering, input capture, live metric plots.
// Framework-free and fully injectable so the protocol loop is testable
// without a browser or a network.

import {
  ActionKey,
  FrameMessage,
  MetricsMessage,
  decodeBase64,
  parseServerMessage,
} from "./protocol.js";

export type Mode = "demo" | "label-reward" | "label-safety" | "spectate";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((data: string) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export interface PixelSurface {
  drawFrame(px: Uint8Array, w: number, h: number): void;
  setBorderTint(on: boolean): void;
  setOverlay(text: string): void;
}

export interface Point {
  x: number;
  y: number;
}

export interface MetricSeries {
  reward: Point[];
  actionValue: Point[];
  takeover: Point[];
}

export interface ConsoleState {
  connection: "idle" | "connecting" | "open" | "closed";
  mode: Mode;
  lastTick: number;
  keysDown: Set<string>;
  activeLabel: 1 | -1 | null;
  droppedMessages: number;
  takeoverActive: boolean;
  series: MetricSeries;
}

export interface ConsoleOptions {
  mode: Mode;
  connect: () => SocketLike;
  surface: PixelSurface;
  onSeriesChange?: (series: MetricSeries) => void;
  reconnectDelayMs?: number;
  scheduleReconnect?: (fn: () => void, delayMs: number) => void;
}

const CONFLICT: ActionKey = "none";

export function scaledCanvasSize(
  w: number,
  h: number,
  scale: number,
): { width: number; height: number } {
  return { width: w * scale, height: h * scale };
}

export class TeachConsole {
  readonly state: ConsoleState;
  private socket: SocketLike | null = null;
  private opts: ConsoleOptions;
  private userClosed = false;

  constructor(opts: ConsoleOptions) {
    this.opts = opts;
    this.state = {
      connection: "idle",
      mode: opts.mode,
      lastTick: -1,
      keysDown: new Set(),
      activeLabel: null,
      droppedMessages: 0,
      takeoverActive: false,
      series: { reward: [], actionValue: [], takeover: [] },
    };
  }

  start(): void {
    this.userClosed = false;
    this.state.connection = "connecting";
    const socket = this.opts.connect();
    this.socket = socket;
    socket.onopen = () => {
      this.state.connection = "open";
      // fresh series on (re)connect: the server replays metric history
      this.state.series = { reward: [], actionValue: [], takeover: [] };
      this.state.lastTick = -1;
      this.emitSeries();
    };
    socket.onmessage = (data) => this.handleMessage(data);
    socket.onclose = () => {
      this.state.connection = "closed";
      if (!this.userClosed && this.opts.scheduleReconnect) {
        this.opts.scheduleReconnect(
          () => this.start(),
          this.opts.reconnectDelayMs ?? 1000,
        );
      }
    };
  }

  stop(): void {
    this.userClosed = true;
    this.socket?.send(JSON.stringify({ type: "close" }));
    this.socket?.close();
  }

  // -- inbound ---------------------------------------------------------

  handleMessage(raw: string): void {
    const msg = parseServerMessage(raw);
    if (msg === null) {
      this.state.droppedMessages++;
      return;
    }
    switch (msg.type) {
      case "frame":
        this.handleFrame(msg);
        break;
      case "metrics":
        this.handleMetrics(msg);
        break;
      case "takeover":
        this.state.takeoverActive = msg.on;
        this.opts.surface.setBorderTint(msg.on);
        break;
      case "event":
        break; // informational only
    }
  }

  private handleFrame(msg: FrameMessage): void {
    if (msg.tick <= this.state.lastTick) return; // rendered tick never decreases
    const px = decodeBase64(msg.px);
    if (px.length !== msg.w * msg.h * 3) {
      this.state.droppedMessages++;
      return;
    }
    this.state.lastTick = msg.tick;
    this.opts.surface.drawFrame(px, msg.w, msg.h);
    const badge = msg.value !== undefined ? ` ${msg.value.toFixed(2)}` : "";
    this.opts.surface.setOverlay(`${this.state.mode} t=${msg.tick}${badge}`);
    if (this.state.mode === "demo") {
      this.sendAction(msg.tick);
    }
  }

  private handleMetrics(msg: MetricsMessage): void {
    this.state.series.reward.push({ x: msg.epoch, y: msg.avg_reward });
    this.state.series.actionValue.push({ x: msg.epoch, y: msg.avg_action_value });
    this.state.series.takeover.push({ x: msg.epoch, y: msg.takeover_fraction });
    this.emitSeries();
  }

  private emitSeries(): void {
    this.opts.onSeriesChange?.(this.state.series);
  }

  // -- input capture ------------------------------------------------------

  currentActionKey(): ActionKey {
    const left = this.state.keysDown.has("ArrowLeft");
    const right = this.state.keysDown.has("ArrowRight");
    if (left && right) return CONFLICT;
    if (left) return "left";
    if (right) return "right";
    return "none";
  }

  private sendAction(tick: number): void {
    this.socket?.send(
      JSON.stringify({ type: "action", tick, key: this.currentActionKey() }),
    );
  }

  keyDown(key: string): void {
    this.state.keysDown.add(key);
    const labelMode =
      this.state.mode === "label-reward" || this.state.mode === "label-safety";
    if (labelMode && (key === "g" || key === "G")) this.sendLabel(1);
    if (labelMode && (key === "b" || key === "B")) this.sendLabel(-1);
  }

  keyUp(key: string): void {
    this.state.keysDown.delete(key);
  }

  private sendLabel(value: 1 | -1): void {
    this.socket?.send(
      JSON.stringify({ type: "label", tick: Math.max(0, this.state.lastTick), value }),
    );
    this.state.activeLabel = value;
  }
}

// -- minimal polyline chart over an abstract 2D context ----------------------

export interface LineContext {
  clear(): void;
  polyline(points: { x: number; y: number }[], color: string): void;
  text(s: string, x: number, y: number, color: string): void;
}

export function plotSeries(
  ctx: LineContext,
  series: MetricSeries,
  width: number,
  height: number,
): void {
  ctx.clear();
  const panels: [string, Point[], string][] = [
    ["avg reward", series.reward, "#4caf50"],
    ["avg action-value", series.actionValue, "#2196f3"],
    ["takeover fraction", series.takeover, "#f44336"],
  ];
  const panelH = height / panels.length;
  panels.forEach(([label, pts, color], i) => {
    ctx.text(label, 4, i * panelH + 12, color);
    if (pts.length === 0) return;
    const xs = pts.map((p) => p.x);
    const ys = pts.map((p) => p.y);
    const xMin = Math.min(...xs);
    const xMax = Math.max(...xs, xMin + 1);
    const yMin = Math.min(...ys);
    const yMax = Math.max(...ys, yMin + 1e-9);
    const mapped = pts.map((p) => ({
      x: ((p.x - xMin) / (xMax - xMin)) * (width - 8) + 4,
      y: (1 - (p.y - yMin) / (yMax - yMin)) * (panelH - 20) + i * panelH + 16,
    }));
    ctx.polyline(mapped, color);
  });
}
