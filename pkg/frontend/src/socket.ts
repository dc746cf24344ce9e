/**
 * One gateway channel (robot or control) over WebSocket: typed envelope
 * sends with a client-side authorization guard, gap detection on receipt,
 * and an exponential-backoff reconnect loop capped at 10 s.
 */

import {
  Envelope,
  EnvelopeType,
  GapDetector,
  SeqCounter,
  decodeEnvelope,
  encodeEnvelope,
} from "./protocol.js";

export type ConnectionState = "disconnected" | "connecting" | "live";

/** The subset of the browser WebSocket surface the client needs; the `ws`
 * package satisfies it too, which is how node tests attach. */
export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type WsFactory = (url: string) => WebSocketLike;

const ROBOT_SEND_TYPES: readonly EnvelopeType[] = [
  "user_text",
  "user_audio",
  "wake_detected",
  "state_update",
];
const CONTROL_SEND_TYPES: readonly EnvelopeType[] = ["config_update", "session_closed"];

export interface ChannelOptions {
  baseUrl: string;
  sessionId: string;
  channel: "robot" | "control";
  wsFactory: WsFactory;
  onEnvelope: (env: Envelope) => void;
  onState?: (state: ConnectionState) => void;
  /** Called on every successful (re)connect; re-sync state via REST here. */
  onConnected?: () => void;
  reconnect?: boolean;
  backoffCapMs?: number;
  schedule?: (fn: () => void, ms: number) => unknown;
}

export class ChannelClient {
  state: ConnectionState = "disconnected";
  readonly gaps = new GapDetector();
  private seq = new SeqCounter();
  private ws: WebSocketLike | null = null;
  private closed = false;
  private backoffMs = 500;
  private readonly allowed: readonly EnvelopeType[];

  constructor(private opts: ChannelOptions) {
    this.allowed = opts.channel === "robot" ? ROBOT_SEND_TYPES : CONTROL_SEND_TYPES;
  }

  get url(): string {
    const wsBase = this.opts.baseUrl.replace(/^http/, "ws").replace(/\/$/, "");
    return `${wsBase}/ws/${this.opts.channel}/${this.opts.sessionId}`;
  }

  connect(): void {
    if (this.closed) return;
    this.setState("connecting");
    const ws = this.opts.wsFactory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.seq = new SeqCounter(); // per-connection: reconnects restart at 0
      this.backoffMs = 500;
      this.setState("live");
      this.opts.onConnected?.();
    };
    ws.onmessage = (ev) => {
      const data = typeof ev.data === "string" ? ev.data : String(ev.data);
      let env: Envelope;
      try {
        env = decodeEnvelope(data);
      } catch {
        return; // a server never sends malformed frames; ignore defensively
      }
      this.gaps.check(env.seq);
      this.opts.onEnvelope(env);
    };
    ws.onclose = () => this.handleDrop();
    ws.onerror = () => {
      /* onclose follows */
    };
  }

  private handleDrop(): void {
    this.ws = null;
    if (this.closed) {
      this.setState("disconnected");
      return;
    }
    this.setState("disconnected");
    if (this.opts.reconnect === false) return;
    const schedule = this.opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, this.opts.backoffCapMs ?? 10000);
    schedule(() => this.connect(), delay);
  }

  /** Sends one envelope; types outside this channel's authorization are a
   * programming error and throw rather than reach the server. */
  send(type: EnvelopeType, payload: Record<string, unknown>): void {
    if (!this.allowed.includes(type)) {
      throw new Error(`${this.opts.channel} channel must not send ${type}`);
    }
    if (this.ws === null || this.state !== "live") {
      throw new Error("channel is not connected");
    }
    this.ws.send(encodeEnvelope(type, this.opts.sessionId, this.seq.next(), payload));
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
    this.ws = null;
    this.setState("disconnected");
  }

  private setState(state: ConnectionState): void {
    if (state !== this.state) {
      this.state = state;
      this.opts.onState?.(state);
    }
  }
}
