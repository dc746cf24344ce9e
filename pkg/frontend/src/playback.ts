/**
 * Reply playback: strictly in-order, one playback_done per reply.
 * Degraded (text-only) replies show their caption for the mirrored
 * pacing formula instead of playing audio.
 */

import type { RobotReplyPayload } from "./protocol.js";
import { captionDurationMs, fromBase64 } from "./wav.js";

export interface AudioPlayer {
  /** Resolves when the clip finished playing; rejects on decode failure. */
  play(wavBytes: Uint8Array): Promise<void>;
}

export interface ReplyPlayerOptions {
  player: AudioPlayer;
  /** Caption to render while the reply is audible/visible. */
  onCaption: (text: string, degraded: boolean) => void;
  /** Fires exactly once per reply after playback (or caption time) ends. */
  onDone: (reply: RobotReplyPayload) => void;
  onDecodeFailure?: (reply: RobotReplyPayload) => void;
  wait?: (ms: number) => Promise<void>;
}

export class ReplyPlayer {
  playing = false;
  private queue: RobotReplyPayload[] = [];

  constructor(private opts: ReplyPlayerOptions) {}

  enqueue(reply: RobotReplyPayload): void {
    this.queue.push(reply);
    if (!this.playing) {
      void this.drain();
    }
  }

  private async drain(): Promise<void> {
    this.playing = true;
    try {
      while (this.queue.length > 0) {
        const reply = this.queue.shift()!;
        await this.playOne(reply);
        this.opts.onDone(reply);
      }
    } finally {
      this.playing = false;
    }
  }

  private async playOne(reply: RobotReplyPayload): Promise<void> {
    const wait = this.opts.wait ?? ((ms) => new Promise<void>((r) => setTimeout(r, ms)));
    if (reply.audio === undefined) {
      this.opts.onCaption(reply.text, true);
      await wait(captionDurationMs(reply.text));
      return;
    }
    this.opts.onCaption(reply.text, false);
    try {
      await this.opts.player.play(fromBase64(reply.audio.payload_b64));
    } catch {
      // Caption-only fallback with a warning glyph upstream.
      this.opts.onDecodeFailure?.(reply);
      await wait(captionDurationMs(reply.text));
    }
  }
}
