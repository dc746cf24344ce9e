/**
 * WAV helpers: pack captured PCM into the 16 kHz 16-bit mono container the
 * gateway expects, base64 both ways, and read enough of a header to know
 * what a reply clip holds.
 */

export const TARGET_SAMPLE_RATE = 16000;
export const CAPTION_MS_PER_CHAR = 50;
export const CAPTION_MIN_MS = 200;

/** Linear-interpolation resample to the wire sample rate. */
export function resampleTo16k(samples: Float32Array, fromRate: number): Float32Array {
  if (fromRate === TARGET_SAMPLE_RATE) return samples;
  const outLength = Math.max(1, Math.round((samples.length * TARGET_SAMPLE_RATE) / fromRate));
  const out = new Float32Array(outLength);
  const step = fromRate / TARGET_SAMPLE_RATE;
  for (let i = 0; i < outLength; i++) {
    const position = i * step;
    const index = Math.floor(position);
    const frac = position - index;
    const a = samples[Math.min(index, samples.length - 1)];
    const b = samples[Math.min(index + 1, samples.length - 1)];
    out[i] = a + (b - a) * frac;
  }
  return out;
}

/**
 * 16-bit mono PCM WAV. The optional comment lands in a LIST/INFO ICMT
 * chunk; the gateway's mock transcriber reads ground-truth text from it,
 * which is how fixture-driven voice tests work offline.
 */
export function encodeWavPcm16(
  samples: Float32Array,
  sampleRate: number = TARGET_SAMPLE_RATE,
  comment?: string,
): Uint8Array {
  const pcm = new Int16Array(samples.length);
  for (let i = 0; i < samples.length; i++) {
    const v = Math.max(-1, Math.min(1, samples[i]));
    pcm[i] = Math.round(v * 32767);
  }
  const dataSize = pcm.length * 2;
  const dataPad = dataSize % 2;

  let infoChunk = new Uint8Array(0);
  if (comment !== undefined) {
    let text = new TextEncoder().encode(comment + "\0");
    if (text.length % 2) {
      const padded = new Uint8Array(text.length + 1);
      padded.set(text);
      text = padded;
    }
    // LIST(size) INFO ICMT(size) text
    infoChunk = new Uint8Array(8 + 4 + 8 + text.length);
    const infoView = new DataView(infoChunk.buffer);
    writeTag(infoChunk, 0, "LIST");
    infoView.setUint32(4, 4 + 8 + text.length, true);
    writeTag(infoChunk, 8, "INFO");
    writeTag(infoChunk, 12, "ICMT");
    infoView.setUint32(16, text.length, true);
    infoChunk.set(text, 20);
  }

  const riffBody = 4 + (8 + 16) + (8 + dataSize + dataPad) + infoChunk.length;
  const out = new Uint8Array(8 + riffBody);
  const view = new DataView(out.buffer);
  writeTag(out, 0, "RIFF");
  view.setUint32(4, riffBody, true);
  writeTag(out, 8, "WAVE");
  writeTag(out, 12, "fmt ");
  view.setUint32(16, 16, true);
  view.setUint16(20, 1, true); // PCM
  view.setUint16(22, 1, true); // mono
  view.setUint32(24, sampleRate, true);
  view.setUint32(28, sampleRate * 2, true);
  view.setUint16(32, 2, true);
  view.setUint16(34, 16, true);
  writeTag(out, 36, "data");
  view.setUint32(40, dataSize, true);
  for (let i = 0; i < pcm.length; i++) {
    view.setInt16(44 + i * 2, pcm[i], true);
  }
  out.set(infoChunk, 44 + dataSize + dataPad);
  return out;
}

function writeTag(target: Uint8Array, offset: number, tag: string): void {
  for (let i = 0; i < 4; i++) target[offset + i] = tag.charCodeAt(i);
}

export interface WavHeader {
  sampleRateHz: number;
  nFrames: number;
  durationMs: number;
}

export function parseWavHeader(bytes: Uint8Array): WavHeader {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  if (readTag(bytes, 0) !== "RIFF" || readTag(bytes, 8) !== "WAVE") {
    throw new Error("not a RIFF/WAVE container");
  }
  let sampleRate = 0;
  let bits = 0;
  let channels = 0;
  let dataSize = -1;
  let pos = 12;
  while (pos + 8 <= bytes.length) {
    const tag = readTag(bytes, pos);
    const size = view.getUint32(pos + 4, true);
    if (pos + 8 + size > bytes.length) throw new Error(`truncated ${tag} chunk`);
    if (tag === "fmt ") {
      channels = view.getUint16(pos + 10, true);
      sampleRate = view.getUint32(pos + 12, true);
      bits = view.getUint16(pos + 22, true);
    } else if (tag === "data") {
      dataSize = size;
    }
    pos += 8 + size + (size % 2);
  }
  if (!sampleRate || dataSize < 0 || !bits || !channels) {
    throw new Error("missing fmt or data chunk");
  }
  const nFrames = Math.floor(dataSize / (channels * (bits / 8)));
  return { sampleRateHz: sampleRate, nFrames, durationMs: Math.round((nFrames * 1000) / sampleRate) };
}

/** Decode 16-bit mono PCM payload into floats (for analysis in tests). */
export function wavSamples(bytes: Uint8Array): Float32Array {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let pos = 12;
  while (pos + 8 <= bytes.length) {
    const tag = readTag(bytes, pos);
    const size = view.getUint32(pos + 4, true);
    if (tag === "data") {
      const n = Math.floor(size / 2);
      const out = new Float32Array(n);
      for (let i = 0; i < n; i++) {
        out[i] = view.getInt16(pos + 8 + i * 2, true) / 32768;
      }
      return out;
    }
    pos += 8 + size + (size % 2);
  }
  throw new Error("missing data chunk");
}

function readTag(bytes: Uint8Array, offset: number): string {
  return String.fromCharCode(bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]);
}

export function toBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") {
    return Buffer.from(bytes).toString("base64");
  }
  let binary = "";
  for (let i = 0; i < bytes.length; i += 0x8000) {
    binary += String.fromCharCode(...bytes.subarray(i, i + 0x8000));
  }
  return btoa(binary);
}

export function fromBase64(b64: string): Uint8Array {
  if (typeof Buffer !== "undefined") {
    return new Uint8Array(Buffer.from(b64, "base64"));
  }
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

/** Caption display time for text-only degraded replies; mirrors the mock
 * synthesizer's pacing so perceived timing stays consistent. */
export function captionDurationMs(text: string): number {
  return Math.max(CAPTION_MIN_MS, CAPTION_MS_PER_CHAR * text.length);
}
