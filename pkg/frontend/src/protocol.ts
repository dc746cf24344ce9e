/**
 * Client side of the gateway envelope protocol (v1).
 *
 * Both WebSocket channels carry the same frame shape; seq is a gapless
 * per-connection counter in each direction, and the server answers any
 * protocol violation with a typed `error` envelope instead of dropping
 * the connection.
 */

export const PROTOCOL_VERSION = 1;

export type EnvelopeType =
  | "user_text"
  | "user_audio"
  | "wake_detected"
  | "robot_reply"
  | "state_update"
  | "config_update"
  | "heartbeat"
  | "error"
  | "session_closed";

export const ENVELOPE_TYPES: readonly EnvelopeType[] = [
  "user_text",
  "user_audio",
  "wake_detected",
  "robot_reply",
  "state_update",
  "config_update",
  "heartbeat",
  "error",
  "session_closed",
];

export type AvatarPhase = "idle" | "listening" | "thinking" | "speaking";

export interface AudioClipPayload {
  payload_b64: string;
  mime: "audio/wav";
  sample_rate_hz: number;
  duration_ms: number;
}

export interface RobotReplyPayload {
  in_reply_to: string;
  text: string;
  latency_ms: { stt?: number; llm: number; tts: number };
  audio?: AudioClipPayload;
  degraded?: boolean;
}

export interface StateUpdatePayload {
  phase: AvatarPhase;
  blinking: boolean;
}

export interface HeartbeatPayload {
  robot_state: StateUpdatePayload;
  robot_connected: boolean;
  control_connected: boolean;
  config_version: number;
}

export interface ErrorPayload {
  code: string;
  message: string;
  in_reply_to?: number;
}

export interface Envelope {
  v: number;
  type: EnvelopeType;
  session_id: string;
  seq: number;
  ts: number;
  payload: Record<string, unknown>;
}

export class ProtocolError extends Error {
  constructor(public code: string, message: string) {
    super(message);
  }
}

export function encodeEnvelope(
  type: EnvelopeType,
  sessionId: string,
  seq: number,
  payload: Record<string, unknown>,
): string {
  return JSON.stringify({
    v: PROTOCOL_VERSION,
    type,
    session_id: sessionId,
    seq,
    ts: Date.now(),
    payload,
  });
}

export function decodeEnvelope(frame: string): Envelope {
  let raw: unknown;
  try {
    raw = JSON.parse(frame);
  } catch (err) {
    throw new ProtocolError("parse_error", `malformed frame: ${err}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ProtocolError("parse_error", "frame is not an object");
  }
  const env = raw as Record<string, unknown>;
  if (env.v !== PROTOCOL_VERSION) {
    throw new ProtocolError("unsupported_version", `unsupported protocol version ${env.v}`);
  }
  if (!ENVELOPE_TYPES.includes(env.type as EnvelopeType)) {
    throw new ProtocolError("unknown_type", `unknown envelope type ${env.type}`);
  }
  if (
    typeof env.session_id !== "string" ||
    typeof env.seq !== "number" ||
    typeof env.ts !== "number" ||
    typeof env.payload !== "object" ||
    env.payload === null
  ) {
    throw new ProtocolError("schema_violation", "envelope is missing required fields");
  }
  return env as unknown as Envelope;
}

/** Outbound counter: 0, 1, 2, ... exactly one per sent envelope. */
export class SeqCounter {
  private next_ = 0;
  next(): number {
    return this.next_++;
  }
}

/** Inbound gap/repeat detector; resyncs after reporting a violation. */
export class GapDetector {
  private expected = 0;
  violations = 0;
  check(seq: number): boolean {
    if (seq === this.expected) {
      this.expected += 1;
      return true;
    }
    this.violations += 1;
    this.expected = seq + 1;
    return false;
  }
}
