/**
 * Microphone capture for push-to-talk and wake follow-up, behind an
 * injectable audio source so every code path is testable without a
 * device. Clips are resampled to 16 kHz mono WAV and base64-wrapped into
 * the wire's audio payload shape.
 */

import type { AudioClipPayload } from "./protocol.js";
import { TARGET_SAMPLE_RATE, encodeWavPcm16, resampleTo16k, toBase64 } from "./wav.js";

export const MAX_CAPTURE_MS = 30000;

export interface AudioSource {
  /** Begin capturing; rejects if the microphone is unavailable/denied. */
  start(): Promise<void>;
  /** Stop and return everything captured since start(). */
  stop(): Promise<Float32Array>;
  readonly sampleRate: number;
}

export function clipFromSamples(
  samples: Float32Array,
  sourceRate: number,
  transcript?: string,
): AudioClipPayload {
  const resampled = resampleTo16k(samples, sourceRate);
  const wav = encodeWavPcm16(resampled, TARGET_SAMPLE_RATE, transcript);
  return {
    payload_b64: toBase64(wav),
    mime: "audio/wav",
    sample_rate_hz: TARGET_SAMPLE_RATE,
    duration_ms: Math.round((resampled.length * 1000) / TARGET_SAMPLE_RATE),
  };
}

export interface PushToTalkOptions {
  source: AudioSource;
  onClip: (clip: AudioClipPayload) => void;
  onError?: (message: string) => void;
  maxCaptureMs?: number;
  /** Ground-truth text embedded in the clip for the gateway's mock
   * transcriber; unset in real deployments. */
  transcriptForClip?: () => string | undefined;
  schedule?: (fn: () => void, ms: number) => unknown;
  cancelScheduled?: (handle: unknown) => void;
}

export class PushToTalk {
  recording = false;
  private autoStopHandle: unknown = null;

  constructor(private opts: PushToTalkOptions) {}

  async press(): Promise<void> {
    if (this.recording) return;
    try {
      await this.opts.source.start();
    } catch (err) {
      this.opts.onError?.(`microphone unavailable: ${err}`);
      return;
    }
    this.recording = true;
    const schedule = this.opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.autoStopHandle = schedule(
      () => void this.release(),
      this.opts.maxCaptureMs ?? MAX_CAPTURE_MS,
    );
  }

  /** Stop capturing and emit the clip (release or auto-stop at the cap). */
  async release(): Promise<void> {
    if (!this.recording) return;
    this.recording = false;
    this.clearAutoStop();
    let samples: Float32Array;
    try {
      samples = await this.opts.source.stop();
    } catch (err) {
      this.opts.onError?.(`capture failed: ${err}`);
      return;
    }
    try {
      const clip = clipFromSamples(samples, this.opts.source.sampleRate, this.opts.transcriptForClip?.());
      this.opts.onClip(clip);
    } catch (err) {
      this.opts.onError?.(`encoding failed: ${err}`);
    }
  }

  /** Stop without emitting anything (mode disabled mid-hold). */
  async abort(): Promise<void> {
    if (!this.recording) return;
    this.recording = false;
    this.clearAutoStop();
    try {
      await this.opts.source.stop();
    } catch {
      /* discarded anyway */
    }
  }

  private clearAutoStop(): void {
    if (this.autoStopHandle !== null) {
      const cancel = this.opts.cancelScheduled ?? ((h) => clearTimeout(h as number));
      cancel(this.autoStopHandle);
      this.autoStopHandle = null;
    }
  }
}
