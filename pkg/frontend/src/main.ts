// Browser bootstrap: wires the console core to real DOM, canvas and WebSocket.

import {
  LineContext,
  Mode,
  PixelSurface,
  TeachConsole,
  plotSeries,
  scaledCanvasSize,
} from "./console.js";

const SCALE = 8;

class CanvasSurface implements PixelSurface {
  private ctx: CanvasRenderingContext2D;
  private off: HTMLCanvasElement;
  private overlayEl: HTMLElement;
  private frameBox: HTMLElement;

  constructor(canvas: HTMLCanvasElement, overlayEl: HTMLElement, frameBox: HTMLElement) {
    this.ctx = canvas.getContext("2d")!;
    this.ctx.imageSmoothingEnabled = false; // instructors see exactly the agent's pixels
    this.off = document.createElement("canvas");
    this.overlayEl = overlayEl;
    this.frameBox = frameBox;
  }

  drawFrame(px: Uint8Array, w: number, h: number): void {
    const size = scaledCanvasSize(w, h, SCALE);
    const canvas = this.ctx.canvas;
    if (canvas.width !== size.width || canvas.height !== size.height) {
      canvas.width = size.width;
      canvas.height = size.height;
    }
    this.off.width = w;
    this.off.height = h;
    const img = this.off.getContext("2d")!.createImageData(w, h);
    for (let i = 0, j = 0; i < w * h; i++, j += 3) {
      img.data[4 * i] = px[j];
      img.data[4 * i + 1] = px[j + 1];
      img.data[4 * i + 2] = px[j + 2];
      img.data[4 * i + 3] = 255;
    }
    this.off.getContext("2d")!.putImageData(img, 0, 0);
    this.ctx.imageSmoothingEnabled = false;
    this.ctx.drawImage(this.off, 0, 0, size.width, size.height);
  }

  setBorderTint(on: boolean): void {
    this.frameBox.style.outline = on ? "4px solid #f44336" : "4px solid transparent";
  }

  setOverlay(text: string): void {
    this.overlayEl.textContent = text;
  }
}

class CanvasLineContext implements LineContext {
  constructor(private ctx: CanvasRenderingContext2D) {}

  clear(): void {
    const { width, height } = this.ctx.canvas;
    this.ctx.clearRect(0, 0, width, height);
  }

  polyline(points: { x: number; y: number }[], color: string): void {
    if (points.length === 0) return;
    this.ctx.strokeStyle = color;
    this.ctx.lineWidth = 1.5;
    this.ctx.beginPath();
    this.ctx.moveTo(points[0].x, points[0].y);
    for (const p of points.slice(1)) this.ctx.lineTo(p.x, p.y);
    this.ctx.stroke();
  }

  text(s: string, x: number, y: number, color: string): void {
    this.ctx.fillStyle = color;
    this.ctx.font = "11px monospace";
    this.ctx.fillText(s, x, y);
  }
}

function sessionUrl(mode: Mode): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${location.host}/sessions/@ID@/ws`;
}

async function createSession(mode: Mode): Promise<string> {
  const resp = await fetch("/sessions", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ mode }),
  });
  if (!resp.ok) throw new Error(`session create failed: ${await resp.text()}`);
  return (await resp.json()).id as string;
}

async function boot(): Promise<void> {
  const frameCanvas = document.getElementById("frame") as HTMLCanvasElement;
  const chartCanvas = document.getElementById("charts") as HTMLCanvasElement;
  const overlay = document.getElementById("overlay")!;
  const frameBox = document.getElementById("framebox")!;
  const status = document.getElementById("status")!;
  const surface = new CanvasSurface(frameCanvas, overlay, frameBox);
  const chartCtx = new CanvasLineContext(chartCanvas.getContext("2d")!);

  let console_: TeachConsole | null = null;

  async function enter(mode: Mode): Promise<void> {
    console_?.stop();
    const id = await createSession(mode);
    const url = sessionUrl(mode).replace("@ID@", id);
    console_ = new TeachConsole({
      mode,
      surface,
      connect: () => {
        const ws = new WebSocket(url);
        const like = {
          send: (d: string) => ws.send(d),
          close: () => ws.close(),
          onmessage: null as ((d: string) => void) | null,
          onopen: null as (() => void) | null,
          onclose: null as (() => void) | null,
        };
        ws.onmessage = (ev) => like.onmessage?.(String(ev.data));
        ws.onopen = () => like.onopen?.();
        ws.onclose = () => like.onclose?.();
        return like;
      },
      onSeriesChange: (series) =>
        plotSeries(chartCtx, series, chartCanvas.width, chartCanvas.height),
      scheduleReconnect: (fn, delay) => window.setTimeout(fn, delay),
    });
    console_.start();
    status.textContent = `mode: ${mode} (session ${id})`;
  }

  document.querySelectorAll<HTMLButtonElement>("button[data-mode]").forEach((btn) =>
    btn.addEventListener("click", () => void enter(btn.dataset.mode as Mode)),
  );
  document.addEventListener("keydown", (e) => {
    if (["ArrowLeft", "ArrowRight"].includes(e.key)) e.preventDefault();
    console_?.keyDown(e.key);
  });
  document.addEventListener("keyup", (e) => console_?.keyUp(e.key));
}

void boot();
