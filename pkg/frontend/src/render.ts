/**
 * Scene rendering as a deterministic list of draw commands.
 *
 * Keeping the renderer canvas-free makes golden-fixture tests exact: the
 * command list is data, and a thin applier maps it onto a 2D context.
 */
import { StateMessage } from "./protocol.js";

export const FORCE_FULL_SCALE_N = 10;

export interface Dims {
  width: number;
  height: number;
}

export type DrawOp =
  | { op: "clear"; color: string }
  | { op: "rect"; x: number; y: number; w: number; h: number; color: string }
  | { op: "circle"; x: number; y: number; r: number; color: string }
  | { op: "line"; x1: number; y1: number; x2: number; y2: number; color: string }
  | { op: "text"; x: number; y: number; text: string; color: string };

const BG = "#101418";
const GRID_LOW = "#182028";
const MARKER = "#ff8c3c";
const FORCE_BAR = "#3cc8ff";
const TEXT = "#d0d8e0";
const WARN = "#ff5050";

function gray(intensity: number): string {
  const v = Math.round(40 + 200 * Math.min(1, Math.max(0, intensity)));
  return `rgb(${v},${v},${v})`;
}

function round2(x: number): number {
  return Math.round(x * 100) / 100;
}

/** Top-down grid view plus the arm-0 marker. */
export function renderTopDown(state: StateMessage | null, dims: Dims): DrawOp[] {
  const ops: DrawOp[] = [{ op: "clear", color: BG }];
  if (state === null) return ops;
  const g = Math.round(Math.sqrt(state.grid.length));
  if (g * g !== state.grid.length || g === 0) return ops;
  const cell = Math.min(dims.width, dims.height) / g;
  for (let row = 0; row < g; row++) {
    for (let col = 0; col < g; col++) {
      const value = state.grid[row * g + col];
      ops.push({
        op: "rect",
        x: round2(col * cell),
        y: round2((g - 1 - row) * cell), // world +y is up
        w: round2(cell - 1),
        h: round2(cell - 1),
        color: value > 0 ? gray(value) : GRID_LOW,
      });
    }
  }
  // the grid window is centered on the scene origin and normalized here to
  // [-1, 1]; the marker scales from the first arm's xy against a fixed span
  const arm = state.arms[0];
  if (arm) {
    const span = 0.12; // meters covered half-width, matches the widest task window
    const px = (arm.pose[0] / span + 1) * 0.5 * g * cell;
    const py = (1 - (arm.pose[1] / span + 1) * 0.5) * g * cell;
    ops.push({ op: "circle", x: round2(px), y: round2(py), r: round2(cell * 0.45), color: MARKER });
  }
  return ops;
}

/** Side elevation: ground line, arm height, normal-force bar. */
export function renderSideView(state: StateMessage | null, dims: Dims): DrawOp[] {
  const ops: DrawOp[] = [{ op: "clear", color: BG }];
  const groundY = round2(dims.height * 0.75);
  ops.push({ op: "line", x1: 0, y1: groundY, x2: dims.width, y2: groundY, color: TEXT });
  if (state === null) {
    ops.push({ op: "text", x: 8, y: 16, text: "connecting...", color: WARN });
    return ops;
  }
  const arm = state.arms[0];
  if (arm) {
    const zSpan = 0.15; // meters of headroom shown above the ground line
    const y = groundY - (arm.pose[2] / zSpan) * (groundY - 10);
    const x = round2(dims.width * 0.4);
    ops.push({ op: "circle", x, y: round2(y), r: 6, color: MARKER });
    ops.push({ op: "line", x1: x, y1: round2(y), x2: x, y2: groundY, color: GRID_LOW });

    // force bar: displayed fill equals measured normal force / full scale
    const fraction = Math.min(1, Math.max(0, arm.wrench[2] / FORCE_FULL_SCALE_N));
    const barH = round2(dims.height * 0.6);
    const barX = round2(dims.width - 28);
    const barY = round2(dims.height * 0.15);
    ops.push({ op: "rect", x: barX, y: barY, w: 12, h: barH, color: GRID_LOW });
    ops.push({
      op: "rect",
      x: barX,
      y: round2(barY + barH * (1 - fraction)),
      w: 12,
      h: round2(barH * fraction),
      color: FORCE_BAR,
    });
    ops.push({
      op: "text",
      x: round2(barX - 34),
      y: round2(barY + barH + 14),
      text: `${arm.wrench[2].toFixed(1)}N`,
      color: TEXT,
    });
    ops.push({
      op: "text",
      x: 8,
      y: 16,
      text: `${state.task} t=${state.tick} k=${arm.stiffness_mode}`,
      color: TEXT,
    });
  }
  if (state.recording) {
    ops.push({ op: "circle", x: round2(dims.width - 14), y: 14, r: 6, color: WARN });
    ops.push({ op: "text", x: round2(dims.width - 64), y: 18, text: "REC", color: WARN });
  }
  return ops;
}

/** Apply a command list onto a canvas context. */
export function applyOps(ctx: CanvasRenderingContext2D, dims: Dims, ops: DrawOp[]): void {
  for (const o of ops) {
    switch (o.op) {
      case "clear":
        ctx.fillStyle = o.color;
        ctx.fillRect(0, 0, dims.width, dims.height);
        break;
      case "rect":
        ctx.fillStyle = o.color;
        ctx.fillRect(o.x, o.y, o.w, o.h);
        break;
      case "circle":
        ctx.fillStyle = o.color;
        ctx.beginPath();
        ctx.arc(o.x, o.y, o.r, 0, 2 * Math.PI);
        ctx.fill();
        break;
      case "line":
        ctx.strokeStyle = o.color;
        ctx.beginPath();
        ctx.moveTo(o.x1, o.y1);
        ctx.lineTo(o.x2, o.y2);
        ctx.stroke();
        break;
      case "text":
        ctx.fillStyle = o.color;
        ctx.font = "12px monospace";
        ctx.fillText(o.text, o.x, o.y);
        break;
    }
  }
}
