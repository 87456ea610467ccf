/**
 * WebSocket wrapper with automatic reconnect and a minimal view-model.
 *
 * The socket factory is injectable so tests can drive the state machine
 * without a browser. The recording indicator always mirrors the last
 * server-reported flag; the server stays authoritative.
 */
import { StateMessage, parseServerMessage } from "./protocol.js";

export interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface BridgeCallbacks {
  onState?: (state: StateMessage) => void;
  onError?: (message: string) => void;
  onConnection?: (connected: boolean) => void;
}

export const RECONNECT_DELAY_MS = 1000;

export class BridgeConnection {
  connected = false;
  lastState: StateMessage | null = null;
  private socket: SocketLike | null = null;
  private closed = false;

  constructor(
    readonly url: string,
    readonly callbacks: BridgeCallbacks = {},
    readonly factory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
    readonly schedule: (fn: () => void, ms: number) => void = (fn, ms) => {
      setTimeout(fn, ms);
    },
  ) {}

  connect(): void {
    if (this.closed) return;
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.connected = true;
      this.callbacks.onConnection?.(true);
    };
    sock.onmessage = (ev) => {
      const msg = parseServerMessage(ev.data);
      if (msg === null) return; // tolerate garbage frames
      if (msg.type === "error") {
        this.callbacks.onError?.(msg.message);
        return;
      }
      this.lastState = msg;
      this.callbacks.onState?.(msg);
    };
    const drop = () => {
      if (this.socket !== sock) return;
      this.socket = null;
      if (this.connected) {
        this.connected = false;
        this.callbacks.onConnection?.(false);
      }
      if (!this.closed) {
        this.schedule(() => this.connect(), RECONNECT_DELAY_MS);
      }
    };
    sock.onclose = drop;
    sock.onerror = drop;
  }

  send(text: string): boolean {
    if (!this.connected || this.socket === null) return false;
    this.socket.send(text);
    return true;
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
