/**
 * Panel wiring: two canvas views, a status banner, pointer/keyboard input.
 * All simulation authority stays server-side; this file only moves pixels
 * and forwards commands.
 */
import { BridgeConnection } from "./net.js";
import { InputMapper } from "./input.js";
import { applyOps, renderSideView, renderTopDown } from "./render.js";
import { encodeCommand } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const topCanvas = el<HTMLCanvasElement>("top-view");
const sideCanvas = el<HTMLCanvasElement>("side-view");
const banner = el<HTMLDivElement>("banner");
const topCtx = topCanvas.getContext("2d")!;
const sideCtx = sideCanvas.getContext("2d")!;

const params = new URLSearchParams(window.location.search);
const url = params.get("bridge") ?? `ws://${window.location.hostname}:8765/`;

const input = new InputMapper();
const bridge = new BridgeConnection(url, {
  onConnection: (ok) => {
    banner.textContent = ok ? "" : "connection lost - retrying";
    banner.className = ok ? "hidden" : "warn";
  },
  onError: (message) => {
    banner.textContent = `bridge error: ${message}`;
    banner.className = "warn";
  },
});
bridge.connect();

topCanvas.addEventListener("pointerdown", (ev) => {
  topCanvas.setPointerCapture(ev.pointerId);
  input.pointer({ x: ev.clientX, y: ev.clientY, dragging: true });
});
topCanvas.addEventListener("pointermove", (ev) => {
  input.pointer({ x: ev.clientX, y: ev.clientY, dragging: (ev.buttons & 1) === 1 });
});
topCanvas.addEventListener("pointerup", (ev) => {
  input.pointer({ x: ev.clientX, y: ev.clientY, dragging: false });
});
topCanvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  input.wheel(ev.deltaY);
});
window.addEventListener("keydown", (ev) => {
  if (input.key(ev.key)) ev.preventDefault();
});

function frame(nowMs: number): void {
  const cmd = input.flush(nowMs);
  if (cmd !== null) {
    bridge.send(encodeCommand(cmd));
  }
  const dimsTop = { width: topCanvas.width, height: topCanvas.height };
  const dimsSide = { width: sideCanvas.width, height: sideCanvas.height };
  applyOps(topCtx, dimsTop, renderTopDown(bridge.lastState, dimsTop));
  applyOps(sideCtx, dimsSide, renderSideView(bridge.lastState, dimsSide));
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
