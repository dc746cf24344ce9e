/**
 * The end-user-facing robot screen: animated avatar driven purely by
 * server state_update events, text input, push-to-talk capture, the
 * wake-word loop, and reply playback with playback-done confirmation.
 *
 * Browser devices (microphone, speech recognition, audio output) are
 * injected so the whole surface runs under test without hardware.
 */

import { GatewayApi, SessionInfo } from "../api.js";
import { AudioSource, PushToTalk, clipFromSamples } from "../capture.js";
import { byId, clear, h } from "../dom.js";
import { ReplyPlayer, AudioPlayer } from "../playback.js";
import type { AvatarPhase, Envelope, RobotReplyPayload, StateUpdatePayload } from "../protocol.js";
import { ChannelClient, ConnectionState, WsFactory } from "../socket.js";
import { RecognizerFactory, WakeListener, matchesWakePhrase } from "../wake.js";

export const BLINK_MIN_MS = 3000;
export const BLINK_MAX_MS = 6000;
export const BLINK_FLASH_MS = 150;

export interface RobotDeps {
  doc: Document;
  api: GatewayApi;
  baseUrl: string;
  wsFactory: WsFactory;
  audioSource: AudioSource | null;
  recognizerFactory: RecognizerFactory;
  player: AudioPlayer;
  /** Fixture hook: ground-truth transcript embedded in captured clips so
   * the gateway's mock transcriber can read it; unset with real speech
   * providers. */
  transcriptForClip?: () => string | undefined;
  schedule?: (fn: () => void, ms: number) => unknown;
  cancelScheduled?: (handle: unknown) => void;
  random?: () => number;
  wait?: (ms: number) => Promise<void>;
}

export class RobotApp {
  session: SessionInfo | null = null;
  phase: AvatarPhase = "idle";
  blinking = false;
  blinkCount = 0;
  recording = false;
  wakeCapturing = false;
  connection: ConnectionState = "disconnected";

  private channel: ChannelClient | null = null;
  private ptt: PushToTalk | null = null;
  private wake: WakeListener | null = null;
  private replyPlayer: ReplyPlayer;
  private blinkTimer: unknown = null;
  private wakeJustMatched = false;

  constructor(
    private root: HTMLElement,
    private deps: RobotDeps,
  ) {
    this.replyPlayer = new ReplyPlayer({
      player: deps.player,
      onCaption: (text, degraded) => this.showCaption(text, degraded),
      onDone: () => this.confirmPlayback(),
      onDecodeFailure: () => this.showToast("audio decode failed; caption only"),
      wait: deps.wait,
    });
    this.renderJoinForm();
  }

  private get doc(): Document {
    return this.deps.doc;
  }

  private schedule(fn: () => void, ms: number): unknown {
    return (this.deps.schedule ?? ((f, m) => setTimeout(f, m)))(fn, ms);
  }

  private cancel(handle: unknown): void {
    (this.deps.cancelScheduled ?? ((hnd) => clearTimeout(hnd as number)))(handle);
  }

  // -- join ----------------------------------------------------------------

  private renderJoinForm(): void {
    clear(this.root);
    this.root.append(
      h(this.doc, "div", { id: "join-form" },
        h(this.doc, "input", { id: "join-id", placeholder: "session id" }),
        h(this.doc, "button", { id: "join-btn" }, "Join"),
        h(this.doc, "div", { id: "join-error" }),
      ),
    );
    byId(this.root, "join-btn").addEventListener("click", () => {
      const id = byId<HTMLInputElement>(this.root, "join-id").value.trim();
      if (id) void this.join(id);
    });
  }

  async join(sessionId: string): Promise<void> {
    try {
      this.session = await this.deps.api.getSession(sessionId);
    } catch (err) {
      const slot = this.root.querySelector("#join-error");
      if (slot) slot.textContent = String(err);
      return;
    }
    this.renderScreen();
    this.connectChannel();
    this.applyConfig();
    this.scheduleBlink();
  }

  private renderScreen(): void {
    const doc = this.doc;
    clear(this.root);
    this.root.append(
      h(doc, "div", { id: "overlay", class: "hidden" }, "reconnecting..."),
      h(doc, "div", { id: "avatar", class: "avatar idle" }),
      h(doc, "div", { id: "caption" }),
      h(doc, "form", { id: "text-form", class: "hidden" },
        h(doc, "input", { id: "text-input", placeholder: "type to the robot" }),
        h(doc, "button", { id: "send-btn", type: "button" }, "Send"),
      ),
      h(doc, "button", { id: "ptt-btn", class: "hidden" }, "Hold to talk"),
      h(doc, "div", { id: "mic-banner", class: "hidden" }, "microphone unavailable"),
      h(doc, "div", { id: "wake-note", class: "hidden" }),
      h(doc, "ul", { id: "toast" }),
    );
    byId(this.root, "send-btn").addEventListener("click", () => this.sendText());
    const ptt = byId(this.root, "ptt-btn");
    ptt.addEventListener("pointerdown", () => void this.pressPtt());
    ptt.addEventListener("pointerup", () => void this.releasePtt());
  }

  private connectChannel(): void {
    this.channel?.close();
    this.channel = new ChannelClient({
      baseUrl: this.deps.baseUrl,
      sessionId: this.session!.id,
      channel: "robot",
      wsFactory: this.deps.wsFactory,
      onEnvelope: (env) => this.handleEnvelope(env),
      onState: (state) => {
        this.connection = state;
        const overlay = this.root.querySelector("#overlay");
        overlay?.classList.toggle("hidden", state === "live");
        if (state !== "live") this.setPhase("idle"); // frozen idle while away
      },
      onConnected: () => void this.refreshConfig(),
      schedule: this.deps.schedule,
    });
    this.channel.connect();
  }

  private async refreshConfig(): Promise<void> {
    if (!this.session) return;
    try {
      this.session = await this.deps.api.getSession(this.session.id);
      this.applyConfig();
    } catch {
      /* retried on next reconnect */
    }
  }

  // -- config-driven controls ---------------------------------------------------

  private applyConfig(): void {
    const config = this.session!.config;
    const avatar = this.root.querySelector("#avatar");
    if (avatar) {
      avatar.className = `avatar ${this.phase}${this.blinking ? " blink" : ""}`;
      avatar.setAttribute("data-avatar", config.avatar_id);
    }
    this.root.querySelector("#text-form")?.classList.toggle("hidden", !config.modes.text_enabled);
    this.root.querySelector("#ptt-btn")?.classList.toggle("hidden", !config.modes.push_to_talk_enabled);

    if (config.modes.push_to_talk_enabled && this.deps.audioSource && this.ptt === null) {
      this.ptt = new PushToTalk({
        source: this.deps.audioSource,
        onClip: (clip) => {
          this.recording = false;
          this.trySend("user_audio", { audio: clip as unknown as Record<string, unknown>, modality: "voice_button" });
        },
        onError: (message) => {
          this.recording = false;
          this.root.querySelector("#mic-banner")?.classList.remove("hidden");
          (this.root.querySelector("#ptt-btn") as HTMLButtonElement | null)?.setAttribute("disabled", "");
          this.showToast(message);
        },
        transcriptForClip: this.deps.transcriptForClip,
        schedule: this.deps.schedule,
        cancelScheduled: this.deps.cancelScheduled,
      });
    }
    if (!config.modes.push_to_talk_enabled && this.recording) {
      // Mode toggled off mid-hold: abort, nothing is sent.
      void this.ptt?.abort();
      this.recording = false;
    }

    const note = this.root.querySelector("#wake-note");
    if (config.modes.proactive_enabled) {
      if (this.wake === null) {
        this.wake = new WakeListener({
          recognizerFactory: this.wrapRecognizerFactory(),
          language: config.language,
          onWake: () => this.onWakeDetected(),
          schedule: this.deps.schedule,
        });
      }
      if (this.wake.available) {
        this.wake.start();
        note?.classList.add("hidden");
      } else if (note) {
        note.textContent = "wake word unavailable: this browser has no speech recognition";
        note.classList.remove("hidden");
      }
    } else {
      this.wake?.stop();
      if (this.wakeCapturing) void this.abortWakeCapture();
      note?.classList.add("hidden");
    }
  }

  /** Recognition results double as the end-of-speech signal for the wake
   * capture window: the first non-wake result while capturing closes it. */
  private wrapRecognizerFactory(): RecognizerFactory {
    const inner = this.deps.recognizerFactory;
    return () => {
      const recognizer = inner();
      if (recognizer === null) return null;
      return new Proxy(recognizer, {
        set: (target, prop, value) => {
          const record = target as unknown as Record<string, unknown>;
          if (prop === "onresult" && typeof value === "function") {
            const original = value as (transcripts: string[]) => void;
            record[prop] = (transcripts: string[]) => {
              original(transcripts);
              this.onRecognitionResult(transcripts);
            };
            return true;
          }
          record[prop as string] = value;
          return true;
        },
      });
    };
  }

  private onRecognitionResult(transcripts: string[]): void {
    if (this.wakeJustMatched) {
      this.wakeJustMatched = false;
      return; // this result is the wake phrase itself
    }
    if (this.wakeCapturing && !transcripts.some(matchesWakePhrase)) {
      void this.endWakeSpeech();
    }
  }

  private onWakeDetected(): void {
    if (this.wakeCapturing || this.recording || this.replyPlayer.playing) return;
    this.wakeJustMatched = true;
    this.trySend("wake_detected", {});
    if (this.deps.audioSource) {
      this.wakeCapturing = true;
      void this.deps.audioSource.start().catch(() => {
        this.wakeCapturing = false;
      });
    }
  }

  /** User finished the wake utterance: ship it as a voice_wake turn. */
  async endWakeSpeech(): Promise<void> {
    if (!this.wakeCapturing || this.deps.audioSource === null) return;
    this.wakeCapturing = false;
    const samples = await this.deps.audioSource.stop();
    const clip = clipFromSamples(
      samples,
      this.deps.audioSource.sampleRate,
      this.deps.transcriptForClip?.(),
    );
    this.trySend("user_audio", { audio: clip as unknown as Record<string, unknown>, modality: "voice_wake" });
  }

  private async abortWakeCapture(): Promise<void> {
    if (!this.wakeCapturing) return;
    this.wakeCapturing = false;
    try {
      await this.deps.audioSource?.stop();
    } catch {
      /* discarded */
    }
  }

  // -- inputs ---------------------------------------------------------------------

  sendText(): void {
    const input = this.root.querySelector("#text-input") as HTMLInputElement | null;
    if (!input || !input.value.trim()) return;
    this.trySend("user_text", { text: input.value });
    input.value = "";
  }

  async pressPtt(): Promise<void> {
    if (this.ptt === null || this.replyPlayer.playing || this.wakeCapturing) return;
    await this.ptt.press();
    this.recording = this.ptt.recording;
    this.root.querySelector("#ptt-btn")?.classList.toggle("recording", this.recording);
  }

  async releasePtt(): Promise<void> {
    if (this.ptt === null) return;
    await this.ptt.release();
    this.recording = false;
    this.root.querySelector("#ptt-btn")?.classList.remove("recording");
  }

  private trySend(type: "user_text" | "user_audio" | "wake_detected" | "state_update", payload: Record<string, unknown>): void {
    try {
      this.channel?.send(type, payload);
    } catch (err) {
      this.showToast(String(err));
    }
  }

  // -- envelopes --------------------------------------------------------------------

  handleEnvelope(env: Envelope): void {
    switch (env.type) {
      case "state_update": {
        const payload = env.payload as unknown as StateUpdatePayload;
        const wasListening = this.phase === "listening";
        this.setPhase(payload.phase);
        if (payload.phase === "idle" && wasListening && this.wakeCapturing) {
          // Wake window expired server-side with no utterance.
          void this.abortWakeCapture();
        }
        break;
      }
      case "robot_reply": {
        this.replyPlayer.enqueue(env.payload as unknown as RobotReplyPayload);
        break;
      }
      case "config_update": {
        if (this.session) {
          this.session = {
            ...this.session,
            config: env.payload.config as SessionInfo["config"],
            config_version: env.payload.config_version as number,
          };
          this.applyConfig(); // sprite/mode swap without reload
        }
        break;
      }
      case "session_closed": {
        this.showToast(`session closed: ${env.payload.reason}`);
        this.wake?.stop();
        break;
      }
      case "error": {
        this.showToast(`${env.payload.code}: ${env.payload.message}`);
        break;
      }
      default:
        break;
    }
  }

  private confirmPlayback(): void {
    this.trySend("state_update", { phase: "idle", blinking: this.blinking });
  }

  // -- presentation -------------------------------------------------------------------

  setPhase(phase: AvatarPhase): void {
    this.phase = phase;
    const avatar = this.root.querySelector("#avatar");
    if (avatar) {
      avatar.className = `avatar ${phase}${this.blinking ? " blink" : ""}`;
      if (this.session) avatar.setAttribute("data-avatar", this.session.config.avatar_id);
    }
  }

  private scheduleBlink(): void {
    const random = this.deps.random ?? Math.random;
    const delay = BLINK_MIN_MS + random() * (BLINK_MAX_MS - BLINK_MIN_MS);
    this.blinkTimer = this.schedule(() => {
      if (this.phase === "idle") {
        this.blinkCount += 1;
        this.blinking = true;
        this.setPhase(this.phase);
        this.schedule(() => {
          this.blinking = false;
          this.setPhase(this.phase);
        }, BLINK_FLASH_MS);
      }
      this.scheduleBlink();
    }, delay);
  }

  private showCaption(text: string, degraded: boolean): void {
    const caption = this.root.querySelector("#caption");
    if (caption) caption.textContent = degraded ? `⚠ ${text}` : text;
  }

  private showToast(message: string): void {
    const toast = this.root.querySelector("#toast");
    toast?.append(h(this.doc, "li", {}, message));
  }

  dispose(): void {
    this.channel?.close();
    this.wake?.stop();
    if (this.blinkTimer !== null) this.cancel(this.blinkTimer);
  }
}
