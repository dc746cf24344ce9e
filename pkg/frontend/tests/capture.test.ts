import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { MAX_CAPTURE_MS, PushToTalk, clipFromSamples } from "../src/capture.js";
import type { AudioClipPayload } from "../src/protocol.js";
import { fromBase64, parseWavHeader } from "../src/wav.js";
import { FakeAudioSource, sine } from "./helpers.js";

describe("clipFromSamples", () => {
  it("resamples to 16 kHz and reports matching metadata", () => {
    const clip = clipFromSamples(sine(440, 48000, 96000), 48000); // 2 s at 48 kHz
    expect(clip.mime).toBe("audio/wav");
    expect(clip.sample_rate_hz).toBe(16000);
    expect(clip.duration_ms).toBe(2000);
    const header = parseWavHeader(fromBase64(clip.payload_b64));
    expect(header.sampleRateHz).toBe(16000);
    expect(header.durationMs).toBe(2000);
  });

  it("embeds fixture transcripts for offline mock transcription", () => {
    const clip = clipFromSamples(sine(440, 16000, 1600), 16000, "ground truth");
    const text = new TextDecoder().decode(fromBase64(clip.payload_b64));
    expect(text).toContain("ICMT");
    expect(text).toContain("ground truth");
  });
});

describe("PushToTalk", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  function build(source: FakeAudioSource) {
    const clips: AudioClipPayload[] = [];
    const errors: string[] = [];
    const ptt = new PushToTalk({
      source,
      onClip: (clip) => clips.push(clip),
      onError: (message) => errors.push(message),
    });
    return { ptt, clips, errors };
  }

  it("press/release emits one clip of the captured duration", async () => {
    const source = new FakeAudioSource();
    source.samples = sine(440, 48000, 96000); // 2 s
    const { ptt, clips } = build(source);
    await ptt.press();
    expect(ptt.recording).toBe(true);
    await ptt.release();
    expect(ptt.recording).toBe(false);
    expect(clips).toHaveLength(1);
    expect(clips[0].duration_ms).toBe(2000);
    expect(source.stopped).toBe(1);
  });

  it("auto-stops at the 30 s cap and still emits", async () => {
    const source = new FakeAudioSource();
    const { ptt, clips } = build(source);
    await ptt.press();
    await vi.advanceTimersByTimeAsync(MAX_CAPTURE_MS + 1000);
    expect(ptt.recording).toBe(false);
    expect(clips).toHaveLength(1);
    await ptt.release(); // releasing after the auto-stop is a no-op
    expect(clips).toHaveLength(1);
  });

  it("abort discards the capture without emitting", async () => {
    const source = new FakeAudioSource();
    const { ptt, clips } = build(source);
    await ptt.press();
    await ptt.abort();
    expect(clips).toHaveLength(0);
    expect(source.stopped).toBe(1);
    await vi.advanceTimersByTimeAsync(MAX_CAPTURE_MS + 1000);
    expect(clips).toHaveLength(0); // auto-stop timer was cancelled
  });

  it("microphone denial surfaces an error and never records", async () => {
    const source = new FakeAudioSource();
    source.failStart = true;
    const { ptt, clips, errors } = build(source);
    await ptt.press();
    expect(ptt.recording).toBe(false);
    expect(errors).toHaveLength(1);
    expect(errors[0]).toMatch(/microphone unavailable/);
    expect(clips).toHaveLength(0);
  });

  it("double press is idempotent", async () => {
    const source = new FakeAudioSource();
    const { ptt, clips } = build(source);
    await ptt.press();
    await ptt.press();
    expect(source.started).toBe(1);
    await ptt.release();
    expect(clips).toHaveLength(1);
  });
});
