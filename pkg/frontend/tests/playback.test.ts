import { describe, expect, it } from "vitest";

import { ReplyPlayer } from "../src/playback.js";
import type { RobotReplyPayload } from "../src/protocol.js";
import { encodeWavPcm16, toBase64 } from "../src/wav.js";
import { FakePlayer, sine } from "./helpers.js";

function reply(text: string, withAudio = true): RobotReplyPayload {
  const payload: RobotReplyPayload = {
    in_reply_to: "u0",
    text,
    latency_ms: { llm: 1, tts: 1 },
  };
  if (withAudio) {
    const wav = encodeWavPcm16(sine(330, 16000, 1600), 16000);
    payload.audio = {
      payload_b64: toBase64(wav),
      mime: "audio/wav",
      sample_rate_hz: 16000,
      duration_ms: 100,
    };
  }
  return payload;
}

function build(player: FakePlayer, waits: number[] = []) {
  const done: string[] = [];
  const captions: Array<{ text: string; degraded: boolean }> = [];
  const replyPlayer = new ReplyPlayer({
    player,
    onCaption: (text, degraded) => captions.push({ text, degraded }),
    onDone: (r) => done.push(r.text),
    wait: (ms) => {
      waits.push(ms);
      return Promise.resolve();
    },
  });
  return { replyPlayer, done, captions };
}

describe("ReplyPlayer", () => {
  it("plays and confirms exactly once per reply", async () => {
    const player = new FakePlayer();
    const { replyPlayer, done, captions } = build(player);
    replyPlayer.enqueue(reply("first"));
    await Promise.resolve();
    await Promise.resolve();
    expect(player.played).toHaveLength(1);
    expect(done).toEqual(["first"]);
    expect(captions).toEqual([{ text: "first", degraded: false }]);
  });

  it("queued replies play strictly in order", async () => {
    const player = new FakePlayer();
    player.autoResolve = false;
    const { replyPlayer, done } = build(player);
    replyPlayer.enqueue(reply("one"));
    replyPlayer.enqueue(reply("two"));
    await Promise.resolve();
    expect(player.played).toHaveLength(1); // second waits for the first
    expect(done).toEqual([]);
    player.finishOne();
    await new Promise((r) => setTimeout(r, 0));
    expect(player.played).toHaveLength(2);
    expect(done).toEqual(["one"]);
    player.finishOne();
    await new Promise((r) => setTimeout(r, 0));
    expect(done).toEqual(["one", "two"]);
  });

  it("degraded replies show a caption for the pacing formula, then confirm", async () => {
    const player = new FakePlayer();
    const waits: number[] = [];
    const { replyPlayer, done, captions } = build(player, waits);
    replyPlayer.enqueue(reply("x".repeat(40), false));
    await new Promise((r) => setTimeout(r, 0));
    expect(player.played).toHaveLength(0); // nothing to play
    expect(captions[0].degraded).toBe(true);
    expect(waits).toEqual([2000]); // 40 chars x 50 ms
    expect(done).toHaveLength(1);
  });

  it("decode failure falls back to caption and still confirms once", async () => {
    const player = new FakePlayer();
    player.failNext = true;
    const waits: number[] = [];
    const decodeFailures: string[] = [];
    const done: string[] = [];
    const replyPlayer = new ReplyPlayer({
      player,
      onCaption: () => undefined,
      onDone: (r) => done.push(r.text),
      onDecodeFailure: (r) => decodeFailures.push(r.text),
      wait: (ms) => {
        waits.push(ms);
        return Promise.resolve();
      },
    });
    replyPlayer.enqueue(reply("broken clip"));
    await new Promise((r) => setTimeout(r, 0));
    expect(decodeFailures).toEqual(["broken clip"]);
    expect(done).toEqual(["broken clip"]);
  });
});
