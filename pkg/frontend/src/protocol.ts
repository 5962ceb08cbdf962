// Message schema of the session service (JSON text frames over WebSocket).

export type ServerMessage =
  | FrameMessage
  | MetricsMessage
  | TakeoverMessage
  | EventMessage;

export interface FrameMessage {
  type: "frame";
  tick: number;
  w: number;
  h: number;
  px: string; // base64 of row-major u8 RGB
  value?: number; // optional reward/safety badge
}

export interface MetricsMessage {
  type: "metrics";
  epoch: number;
  avg_reward: number;
  avg_action_value: number;
  accidents: number;
  takeover_fraction: number;
  restarts: number;
}

export interface TakeoverMessage {
  type: "takeover";
  tick: number;
  on: boolean;
}

export interface EventMessage {
  type: "event";
  kind: string;
  tick?: number;
}

export type ActionKey = "left" | "right" | "none";

export interface ActionMessage {
  type: "action";
  tick: number;
  key: ActionKey;
}

export interface LabelMessage {
  type: "label";
  tick: number;
  value: 1 | -1;
}

export function decodeBase64(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  // node (tests): Buffer exists but is not part of the DOM lib
  const buf = (globalThis as { Buffer?: { from(s: string, enc: string): Uint8Array } }).Buffer;
  if (!buf) throw new Error("no base64 decoder available");
  return new Uint8Array(buf.from(b64, "base64"));
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const m = msg as Record<string, unknown>;
  switch (m.type) {
    case "frame":
      if (
        typeof m.tick === "number" &&
        typeof m.w === "number" &&
        typeof m.h === "number" &&
        typeof m.px === "string"
      )
        return m as unknown as FrameMessage;
      return null;
    case "metrics":
      if (typeof m.epoch === "number") return m as unknown as MetricsMessage;
      return null;
    case "takeover":
      if (typeof m.tick === "number" && typeof m.on === "boolean")
        return m as unknown as TakeoverMessage;
      return null;
    case "event":
      if (typeof m.kind === "string") return m as unknown as EventMessage;
      return null;
    default:
      return null;
  }
}
