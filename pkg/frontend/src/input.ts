/**
 * Pointer/keyboard mapping to teleop commands, rate-limited to 20 Hz.
 *
 * Pointer drags accumulate meters of commanded motion; each flush sends at
 * most one clamped delta and carries the remainder forward, so large drags
 * stream out over several messages instead of being truncated. Keys:
 * space = stiffness toggle, R/S/X = record start/stop/discard,
 * [ / ] = yaw, G/H = gripper close/open.
 */
import { CommandMessage, DELTA_POS_LIMIT, DELTA_ROT_LIMIT, RecordAction, clampDelta } from "./protocol.js";

export const SEND_INTERVAL_MS = 50; // 20 Hz ceiling

export interface PointerSample {
  x: number;
  y: number;
  dragging: boolean;
}

type Pending = Omit<CommandMessage, "v" | "type">;

export class InputMapper {
  readonly metersPerPixel: number;
  private last: PointerSample | null = null;
  private acc = [0, 0, 0, 0, 0, 0];
  private pendingToggle = false;
  private pendingRecord: RecordAction | undefined;
  private pendingGripper: number | undefined;
  private lastSendMs = -Infinity;

  constructor(metersPerPixel = 0.0005) {
    this.metersPerPixel = metersPerPixel;
  }

  pointer(sample: PointerSample): void {
    if (sample.dragging && this.last !== null && this.last.dragging) {
      // screen +y is down; world +y is up
      this.acc[0] += (sample.x - this.last.x) * this.metersPerPixel;
      this.acc[1] -= (sample.y - this.last.y) * this.metersPerPixel;
    }
    this.last = sample;
  }

  wheel(deltaY: number): void {
    this.acc[2] -= deltaY * this.metersPerPixel * 0.25;
  }

  /** Returns true when the key is handled. */
  key(key: string): boolean {
    switch (key.toLowerCase()) {
      case " ":
        this.pendingToggle = !this.pendingToggle;
        return true;
      case "r":
        this.pendingRecord = "start";
        return true;
      case "s":
        this.pendingRecord = "stop";
        return true;
      case "x":
        this.pendingRecord = "discard";
        return true;
      case "[":
        this.acc[5] += 0.02;
        return true;
      case "]":
        this.acc[5] -= 0.02;
        return true;
      case "g":
        this.pendingGripper = 0.0;
        return true;
      case "h":
        this.pendingGripper = 1.0;
        return true;
    }
    return false;
  }

  private hasPayload(): boolean {
    return (
      this.acc.some((v) => Math.abs(v) > 1e-9) ||
      this.pendingToggle ||
      this.pendingRecord !== undefined ||
      this.pendingGripper !== undefined
    );
  }

  /**
   * At most one command per SEND_INTERVAL_MS; the delta never exceeds the
   * protocol clamp and leftover motion carries into the next flush.
   */
  flush(nowMs: number): Pending | null {
    if (nowMs - this.lastSendMs < SEND_INTERVAL_MS || !this.hasPayload()) {
      return null;
    }
    this.lastSendMs = nowMs;
    const cmd: Pending = {};
    if (this.acc.some((v) => Math.abs(v) > 1e-9)) {
      const delta = clampDelta(this.acc);
      for (let i = 0; i < 6; i++) this.acc[i] -= delta[i];
      cmd.delta = delta;
    }
    if (this.pendingToggle) {
      cmd.stiffness_toggle = true;
      this.pendingToggle = false;
    }
    if (this.pendingRecord !== undefined) {
      cmd.record = this.pendingRecord;
      this.pendingRecord = undefined;
    }
    if (this.pendingGripper !== undefined) {
      cmd.gripper = this.pendingGripper;
      this.pendingGripper = undefined;
    }
    return cmd;
  }
}

export function deltaWithinProtocolLimits(delta: number[]): boolean {
  return (
    delta.slice(0, 3).every((v) => Math.abs(v) <= DELTA_POS_LIMIT + 1e-12) &&
    delta.slice(3, 6).every((v) => Math.abs(v) <= DELTA_ROT_LIMIT + 1e-12)
  );
}
