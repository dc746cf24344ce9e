"""WAV container helpers: build, parse, and inspect RIFF/WAVE payloads.

The mock speech providers round-trip ground-truth transcripts through the
standard LIST/INFO comment chunk (ICMT), so fixtures stay ordinary WAV
files playable by anything.
"""

from __future__ import annotations

import base64
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadAudioError
from .model import AudioClip


@dataclass(frozen=True)
class WavInfo:
    sample_rate_hz: int
    n_channels: int
    bits_per_sample: int
    n_frames: int
    transcript: str | None = None

    @property
    def duration_ms_exact(self) -> float:
        return self.n_frames * 1000.0 / self.sample_rate_hz


def build_wav(samples: np.ndarray, sample_rate_hz: int, transcript: str | None = None) -> bytes:
    """Assemble a 16-bit mono PCM WAV; optional ICMT comment chunk."""
    pcm = np.asarray(samples, dtype="<i2").tobytes()
    chunks = [
        b"fmt " + struct.pack("<I", 16) + struct.pack(
            "<HHIIHH", 1, 1, sample_rate_hz, sample_rate_hz * 2, 2, 16
        ),
        b"data" + struct.pack("<I", len(pcm)) + pcm + (b"\x00" if len(pcm) % 2 else b""),
    ]
    if transcript is not None:
        comment = transcript.encode("utf-8") + b"\x00"
        if len(comment) % 2:
            comment += b"\x00"
        info = b"INFO" + b"ICMT" + struct.pack("<I", len(comment)) + comment
        chunks.append(b"LIST" + struct.pack("<I", len(info)) + info)
    body = b"WAVE" + b"".join(chunks)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def parse_wav(data: bytes) -> WavInfo:
    """Walk the chunk list of a RIFF/WAVE blob; raises BadAudioError if torn."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise BadAudioError("not a RIFF/WAVE container")
    declared = struct.unpack("<I", data[4:8])[0]
    if declared + 8 > len(data):
        raise BadAudioError("truncated RIFF payload")

    sample_rate = n_channels = bits = None
    data_len = None
    transcript = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        size = struct.unpack("<I", data[pos + 4 : pos + 8])[0]
        body_start = pos + 8
        if body_start + size > len(data):
            raise BadAudioError(f"truncated {cid!r} chunk")
        body = data[body_start : body_start + size]
        if cid == b"fmt ":
            if size < 16:
                raise BadAudioError("fmt chunk too short")
            _fmt, n_channels, sample_rate, _br, _ba, bits = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data_len = size
        elif cid == b"LIST" and body[:4] == b"INFO":
            transcript = _read_icmt(body[4:])
        pos = body_start + size + (size % 2)

    if sample_rate is None or data_len is None or not bits or not n_channels:
        raise BadAudioError("missing fmt or data chunk")
    n_frames = data_len // (n_channels * (bits // 8))
    return WavInfo(sample_rate, n_channels, bits, n_frames, transcript)


def _read_icmt(info_body: bytes) -> str | None:
    pos = 0
    while pos + 8 <= len(info_body):
        cid = info_body[pos : pos + 4]
        size = struct.unpack("<I", info_body[pos + 4 : pos + 8])[0]
        body = info_body[pos + 8 : pos + 8 + size]
        if cid == b"ICMT":
            return body.split(b"\x00", 1)[0].decode("utf-8", errors="replace")
        pos += 8 + size + (size % 2)
    return None


def sine_samples(freq_hz: float, duration_ms: int, sample_rate_hz: int, amplitude: float = 0.5) -> np.ndarray:
    n = int(round(sample_rate_hz * duration_ms / 1000))
    t = np.arange(n, dtype=np.float64) / sample_rate_hz
    return np.round(np.sin(2 * np.pi * freq_hz * t) * amplitude * 32767).astype("<i2")


def clip_from_wav(wav_bytes: bytes) -> AudioClip:
    """Wrap raw WAV bytes into an AudioClip with header-derived metadata."""
    info = parse_wav(wav_bytes)
    return AudioClip(
        payload_b64=base64.b64encode(wav_bytes).decode("ascii"),
        sample_rate_hz=info.sample_rate_hz,
        duration_ms=round(info.duration_ms_exact),
    )


def decode_clip(clip: AudioClip) -> tuple[bytes, WavInfo]:
    """Decode and validate an AudioClip against its own container header.

    The declared sample_rate_hz must match exactly and duration_ms must
    agree with the header-computed duration within 1 ms.
    """
    try:
        wav_bytes = base64.b64decode(clip.payload_b64, validate=True)
    except Exception as exc:
        raise BadAudioError(f"payload_b64 does not decode: {exc}") from exc
    info = parse_wav(wav_bytes)
    if clip.mime != "audio/wav":
        raise BadAudioError(f"unsupported mime {clip.mime!r}")
    if info.sample_rate_hz != clip.sample_rate_hz:
        raise BadAudioError(
            f"declared sample_rate_hz {clip.sample_rate_hz} != container {info.sample_rate_hz}"
        )
    if abs(info.duration_ms_exact - clip.duration_ms) > 1.0:
        raise BadAudioError(
            f"declared duration_ms {clip.duration_ms} disagrees with container "
            f"({info.duration_ms_exact:.2f} ms)"
        )
    return wav_bytes, info


def dominant_frequency_hz(wav_bytes: bytes) -> float:
    """FFT peak of a mono 16-bit clip (DC bin excluded)."""
    info = parse_wav(wav_bytes)
    if info.bits_per_sample != 16 or info.n_channels != 1:
        raise BadAudioError("dominant_frequency_hz expects 16-bit mono")
    start = _data_offset(wav_bytes)
    pcm = np.frombuffer(wav_bytes, dtype="<i2", count=info.n_frames, offset=start)
    spectrum = np.abs(np.fft.rfft(pcm.astype(np.float64)))
    spectrum[0] = 0.0
    peak = int(np.argmax(spectrum))
    return peak * info.sample_rate_hz / len(pcm)


def _data_offset(data: bytes) -> int:
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        size = struct.unpack("<I", data[pos + 4 : pos + 8])[0]
        if cid == b"data":
            return pos + 8
        pos += 8 + size + (size % 2)
    raise BadAudioError("missing data chunk")
