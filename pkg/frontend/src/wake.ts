/**
 * Wake-word listening on top of the browser speech recognizer. Matching
 * is exact-phrase on recognizer transcripts ("hey bot", case-insensitive,
 * whole words), not acoustic keyword spotting, so the UI stays model-free.
 */

export const WAKE_PHRASE = "hey bot";

const WAKE_PATTERN = /(^|[^\p{L}\p{N}])hey\s+bot($|[^\p{L}\p{N}])/iu;

export function matchesWakePhrase(transcript: string): boolean {
  return WAKE_PATTERN.test(transcript);
}

/** What we need from SpeechRecognition; tests inject a scripted fake. */
export interface RecognizerLike {
  start(): void;
  stop(): void;
  continuous: boolean;
  lang: string;
  onresult: ((transcripts: string[]) => void) | null;
  onerror: ((error?: unknown) => void) | null;
  onend: (() => void) | null;
}

export type RecognizerFactory = () => RecognizerLike | null;

export interface WakeListenerOptions {
  recognizerFactory: RecognizerFactory;
  language: string;
  onWake: () => void;
  schedule?: (fn: () => void, ms: number) => unknown;
  restartBackoffMs?: number;
}

/**
 * Runs continuous recognition and fires onWake once per recognition
 * result that contains the phrase. Recognition errors restart the
 * recognizer with backoff; a missing recognizer leaves available=false so
 * the UI can hide proactive controls with an explanation.
 */
export class WakeListener {
  readonly available: boolean;
  wakes = 0;
  private recognizer: RecognizerLike | null = null;
  private running = false;
  private backoffMs: number;

  constructor(private opts: WakeListenerOptions) {
    this.backoffMs = opts.restartBackoffMs ?? 500;
    this.available = opts.recognizerFactory() !== null;
  }

  start(): void {
    if (!this.available || this.running) return;
    this.running = true;
    this.spinUp();
  }

  private spinUp(): void {
    const recognizer = this.opts.recognizerFactory();
    if (recognizer === null) return;
    this.recognizer = recognizer;
    recognizer.continuous = true;
    recognizer.lang = this.opts.language;
    recognizer.onresult = (transcripts) => {
      if (!this.running) return;
      if (transcripts.some((t) => matchesWakePhrase(t))) {
        this.wakes += 1;
        this.opts.onWake();
      }
    };
    recognizer.onerror = () => this.restartLater();
    recognizer.onend = () => {
      if (this.running) this.restartLater();
    };
    recognizer.start();
  }

  private restartLater(): void {
    if (!this.running) return;
    const schedule = this.opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, 10000);
    schedule(() => {
      if (this.running) this.spinUp();
    }, delay);
  }

  stop(): void {
    this.running = false;
    this.recognizer?.stop();
    this.recognizer = null;
  }
}
