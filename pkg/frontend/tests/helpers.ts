/** Shared test scaffolding: fake devices, a scripted WebSocket, a
 * happy-dom document, and the real-gateway subprocess harness. */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { Window } from "happy-dom";

import type { AudioSource } from "../src/capture.js";
import type { AudioPlayer } from "../src/playback.js";
import type { RecognizerLike } from "../src/wake.js";
import type { WebSocketLike } from "../src/socket.js";
import { SeqCounter, EnvelopeType } from "../src/protocol.js";

export function freshDocument(): { doc: Document; root: HTMLElement } {
  const window = new Window();
  const doc = window.document as unknown as Document;
  const root = doc.createElement("div") as unknown as HTMLElement;
  doc.body.appendChild(root as unknown as Node);
  return { doc, root };
}

export function flushMicrotasks(rounds = 3): Promise<void> {
  let p = Promise.resolve();
  for (let i = 0; i < rounds; i++) p = p.then(() => undefined);
  return p;
}

/** Scripted in-memory socket: opens on a microtask, records sends, and
 * lets tests push server envelopes with a proper outbound seq. */
export class FakeWs implements WebSocketLike {
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  private serverSeq = new SeqCounter();

  constructor(public url: string = "ws://fake") {
    queueMicrotask(() => this.onopen?.());
  }

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    if (!this.closed) {
      this.closed = true;
      this.onclose?.();
    }
  }

  sentEnvelopes(): Array<{ type: string; payload: Record<string, unknown>; seq: number }> {
    return this.sent.map((frame) => JSON.parse(frame));
  }

  pushFromServer(type: EnvelopeType, sessionId: string, payload: Record<string, unknown>): void {
    this.onmessage?.({
      data: JSON.stringify({
        v: 1,
        type,
        session_id: sessionId,
        seq: this.serverSeq.next(),
        ts: Date.now(),
        payload,
      }),
    });
  }
}

export class FakeAudioSource implements AudioSource {
  sampleRate = 48000;
  started = 0;
  stopped = 0;
  failStart = false;
  samples: Float32Array = sine(440, 48000, 9600); // 200 ms default

  async start(): Promise<void> {
    if (this.failStart) throw new Error("permission denied");
    this.started += 1;
  }

  async stop(): Promise<Float32Array> {
    this.stopped += 1;
    return this.samples;
  }
}

export class FakePlayer implements AudioPlayer {
  played: Uint8Array[] = [];
  failNext = false;
  private resolvers: Array<() => void> = [];
  autoResolve = true;

  play(wavBytes: Uint8Array): Promise<void> {
    this.played.push(wavBytes);
    if (this.failNext) {
      this.failNext = false;
      return Promise.reject(new Error("decode failed"));
    }
    if (this.autoResolve) return Promise.resolve();
    return new Promise((resolve) => this.resolvers.push(resolve));
  }

  finishOne(): void {
    this.resolvers.shift()?.();
  }
}

export class FakeRecognizer implements RecognizerLike {
  started = 0;
  stoppedCount = 0;
  continuous = false;
  lang = "";
  onresult: ((transcripts: string[]) => void) | null = null;
  onerror: ((error?: unknown) => void) | null = null;
  onend: (() => void) | null = null;

  start(): void {
    this.started += 1;
  }

  stop(): void {
    this.stoppedCount += 1;
  }

  emit(transcript: string): void {
    this.onresult?.([transcript]);
  }
}

export function sine(freq: number, rate: number, n: number): Float32Array {
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = Math.sin((2 * Math.PI * freq * i) / rate) * 0.5;
  return out;
}

/** Goertzel magnitude at one frequency; enough to pick the dominant tone. */
export function toneMagnitude(samples: Float32Array, rate: number, freq: number): number {
  const k = Math.round((samples.length * freq) / rate);
  const w = (2 * Math.PI * k) / samples.length;
  const c = 2 * Math.cos(w);
  let s0 = 0;
  let s1 = 0;
  let s2 = 0;
  for (let i = 0; i < samples.length; i++) {
    s0 = samples[i] + c * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return Math.sqrt(s1 * s1 + s2 * s2 - c * s1 * s2);
}

export function dominantOf(samples: Float32Array, rate: number, candidates: number[]): number {
  let best = candidates[0];
  let bestMag = -1;
  for (const freq of candidates) {
    const mag = toneMagnitude(samples, rate, freq);
    if (mag > bestMag) {
      bestMag = mag;
      best = freq;
    }
  }
  return best;
}

// -- live gateway subprocess ---------------------------------------------------

export interface LiveGateway {
  url: string;
  stop(): Promise<void>;
}

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

export async function startGateway(): Promise<LiveGateway> {
  const port = await freePort();
  const url = `http://127.0.0.1:${port}`;
  const dataDir = mkdtempSync(join(tmpdir(), "srw-frontend-test-"));
  const proc: ChildProcess = spawn("python3", ["-m", "srw.gateway"], {
    env: {
      ...process.env,
      SRW_BIND_ADDR: `127.0.0.1:${port}`,
      SRW_DATA_DIR: dataDir,
      SRW_PROVIDER_MODE: "mock",
    },
    stdio: ["ignore", "pipe", "pipe"],
  });
  let stderr = "";
  proc.stderr?.on("data", (chunk) => {
    stderr += String(chunk);
  });

  const deadline = Date.now() + 20000;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`gateway exited ${proc.exitCode}: ${stderr}`);
    }
    try {
      const resp = await fetch(`${url}/healthz`);
      if (resp.status === 200) break;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error(`gateway never became ready: ${stderr}`);
    await new Promise((r) => setTimeout(r, 100));
  }

  return {
    url,
    stop: () =>
      new Promise<void>((resolve) => {
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
        setTimeout(() => {
          if (proc.exitCode === null) proc.kill("SIGKILL");
        }, 5000).unref();
      }),
  };
}
