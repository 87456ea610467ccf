/**
 * Wire types shared with the simulator bridge.
 *
 * Server state frames arrive at 20 Hz; command frames carry pose deltas
 * clamped to +-5 mm / +-0.05 rad per message. The clamps are duplicated
 * here for responsiveness, but the server re-clamps regardless.
 */

export const PROTOCOL_VERSION = 1;
export const DELTA_POS_LIMIT = 0.005; // m per message
export const DELTA_ROT_LIMIT = 0.05; // rad per message

export type StiffnessMode = "low" | "high";

export interface ArmState {
  pose: number[]; // [x y z | 6D rotation]
  wrench: number[]; // [fx fy fz tx ty tz]
  gripper: number;
  stiffness_mode: StiffnessMode;
}

export interface StateMessage {
  v: number;
  type: "state";
  tick: number;
  task: string;
  recording: boolean;
  grid: number[]; // G*G row-major intensities in [0, 1]
  arms: ArmState[];
}

export interface ErrorMessage {
  v: number;
  type: "error";
  message: string;
}

export type RecordAction = "start" | "stop" | "discard";

export interface CommandMessage {
  v: number;
  type: "command";
  delta?: number[]; // [dx dy dz drx dry drz]
  gripper?: number;
  stiffness_toggle?: boolean;
  record?: RecordAction;
}

export function clampDelta(delta: number[]): number[] {
  const out = delta.slice(0, 6);
  while (out.length < 6) out.push(0);
  for (let i = 0; i < 3; i++) {
    out[i] = Math.min(DELTA_POS_LIMIT, Math.max(-DELTA_POS_LIMIT, out[i]));
  }
  for (let i = 3; i < 6; i++) {
    out[i] = Math.min(DELTA_ROT_LIMIT, Math.max(-DELTA_ROT_LIMIT, out[i]));
  }
  return out;
}

function isNumberArray(x: unknown, n?: number): x is number[] {
  return Array.isArray(x) && (n === undefined || x.length === n) &&
    x.every((v) => typeof v === "number" && Number.isFinite(v));
}

/** Parse a server frame; returns null for anything malformed. Unknown fields pass through. */
export function parseServerMessage(text: string): StateMessage | ErrorMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  if (msg.type === "error" && typeof msg.message === "string") {
    return { v: Number(msg.v ?? PROTOCOL_VERSION), type: "error", message: msg.message };
  }
  if (msg.type !== "state") return null;
  if (typeof msg.tick !== "number" || typeof msg.recording !== "boolean") return null;
  if (!isNumberArray(msg.grid)) return null;
  if (!Array.isArray(msg.arms)) return null;
  for (const arm of msg.arms) {
    const a = arm as Record<string, unknown>;
    if (!isNumberArray(a.pose, 9) || !isNumberArray(a.wrench, 6)) return null;
    if (a.stiffness_mode !== "low" && a.stiffness_mode !== "high") return null;
  }
  return msg as unknown as StateMessage;
}

export function encodeCommand(cmd: Omit<CommandMessage, "v" | "type">): string {
  const out: CommandMessage = { v: PROTOCOL_VERSION, type: "command" };
  if (cmd.delta !== undefined) out.delta = clampDelta(cmd.delta);
  if (cmd.gripper !== undefined) out.gripper = Math.min(1, Math.max(0, cmd.gripper));
  if (cmd.stiffness_toggle) out.stiffness_toggle = true;
  if (cmd.record !== undefined) out.record = cmd.record;
  return JSON.stringify(out);
}
