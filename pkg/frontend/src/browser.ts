/**
 * Real-browser implementations of the injectable devices: microphone
 * capture (getUserMedia + ScriptProcessor), speech recognition, and WAV
 * playback through an AudioContext.
 */

import type { AudioSource } from "./capture.js";
import type { AudioPlayer } from "./playback.js";
import type { RecognizerFactory, RecognizerLike } from "./wake.js";
import type { WebSocketLike, WsFactory } from "./socket.js";

export class MicrophoneSource implements AudioSource {
  sampleRate = 48000;
  private context: AudioContext | null = null;
  private processor: ScriptProcessorNode | null = null;
  private stream: MediaStream | null = null;
  private chunks: Float32Array[] = [];

  async start(): Promise<void> {
    this.stream = await navigator.mediaDevices.getUserMedia({ audio: true });
    this.context = new AudioContext();
    this.sampleRate = this.context.sampleRate;
    const source = this.context.createMediaStreamSource(this.stream);
    this.processor = this.context.createScriptProcessor(4096, 1, 1);
    this.chunks = [];
    this.processor.onaudioprocess = (event) => {
      this.chunks.push(new Float32Array(event.inputBuffer.getChannelData(0)));
    };
    source.connect(this.processor);
    this.processor.connect(this.context.destination);
  }

  async stop(): Promise<Float32Array> {
    this.processor?.disconnect();
    this.stream?.getTracks().forEach((track) => track.stop());
    await this.context?.close();
    this.processor = null;
    this.stream = null;
    this.context = null;
    const total = this.chunks.reduce((n, c) => n + c.length, 0);
    const out = new Float32Array(total);
    let offset = 0;
    for (const chunk of this.chunks) {
      out.set(chunk, offset);
      offset += chunk.length;
    }
    this.chunks = [];
    return out;
  }
}

// The speech recognition API is not in the standard DOM lib; this is the
// slice of it the wake loop touches.
interface BrowserSpeechRecognition {
  start(): void;
  stop(): void;
  continuous: boolean;
  interimResults: boolean;
  lang: string;
  onresult:
    | ((event: {
        resultIndex: number;
        results: ArrayLike<ArrayLike<{ transcript: string }>>;
      }) => void)
    | null;
  onerror: ((event: unknown) => void) | null;
  onend: (() => void) | null;
}

export function browserRecognizerFactory(): RecognizerFactory {
  return () => {
    const w = window as unknown as Record<string, unknown>;
    const Ctor = (w.SpeechRecognition ?? w.webkitSpeechRecognition) as
      | (new () => BrowserSpeechRecognition)
      | undefined;
    if (!Ctor) return null;
    const recognition = new Ctor();
    recognition.interimResults = false;
    const wrapper: RecognizerLike = {
      start: () => recognition.start(),
      stop: () => recognition.stop(),
      get continuous() {
        return recognition.continuous;
      },
      set continuous(value: boolean) {
        recognition.continuous = value;
      },
      get lang() {
        return recognition.lang;
      },
      set lang(value: string) {
        recognition.lang = value;
      },
      onresult: null,
      onerror: null,
      onend: null,
    };
    recognition.onresult = (event) => {
      const transcripts: string[] = [];
      for (let i = event.resultIndex; i < event.results.length; i++) {
        transcripts.push(event.results[i][0].transcript);
      }
      wrapper.onresult?.(transcripts);
    };
    recognition.onerror = (event) => wrapper.onerror?.(event);
    recognition.onend = () => wrapper.onend?.();
    return wrapper;
  };
}

export class ContextPlayer implements AudioPlayer {
  async play(wavBytes: Uint8Array): Promise<void> {
    const context = new AudioContext();
    try {
      const copy = wavBytes.slice().buffer;
      const buffer = await context.decodeAudioData(copy);
      await new Promise<void>((resolve) => {
        const node = context.createBufferSource();
        node.buffer = buffer;
        node.connect(context.destination);
        node.onended = () => resolve();
        node.start();
      });
    } finally {
      await context.close();
    }
  }
}

export const browserWsFactory: WsFactory = (url) => new WebSocket(url) as unknown as WebSocketLike;
