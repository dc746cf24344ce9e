"""Pluggable LLM, speech-to-text, and text-to-speech clients.

The mock implementations are fully deterministic and offline; every
primary test runs against them. Mocks expose fault-injection markers in
the input text so failures can be triggered through a running server:

    __fail_llm__     generation fails (llm_failed)
    __timeout_llm__  generation times out (llm_timeout)
    __sleep_ms=N__   generation takes N ms (turn-ordering and abort tests)
    __fail_tts__     synthesis fails (tts_failed)

Privacy note mirrored from the deployment model: providers receive only
the current request content; no provider interface accepts or returns
session identifiers, and none persists input.
"""

from __future__ import annotations

import asyncio
import json
import re
import time
from dataclasses import dataclass, field

import httpx

from . import audio
from .errors import (
    LlmFailedError,
    LlmMalformedError,
    LlmTimeoutError,
    SttEmptyError,
    SttFailedError,
    TtsFailedError,
)
from .model import AudioClip

MOCK_TTS_SAMPLE_RATE = 16000
MOCK_TTS_MIN_MS = 200
MOCK_TTS_MS_PER_CHAR = 50
GENDER_FREQ_HZ = {"female": 440.0, "male": 220.0, "neutral": 330.0}

_SLEEP_MARKER = re.compile(r"__sleep_ms=(\d+)__")


@dataclass(frozen=True)
class LlmRequest:
    model: str
    messages: list[dict[str, str]]
    temperature: float = 0.7
    timeout_ms: int = 30000

    def __post_init__(self):
        if not self.model:
            raise ValueError("model name must be nonempty")
        if not self.messages:
            raise ValueError("messages must be nonempty")
        for i, msg in enumerate(self.messages):
            if msg.get("role") == "system" and i != 0:
                raise ValueError("system message must be first and unique")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    model: str
    gen_ms: int


@dataclass(frozen=True)
class SttResult:
    text: str
    stt_ms: int


def _elapsed_ms(start: float) -> int:
    return max(1, round((time.perf_counter() - start) * 1000))


class MockLlm:
    """Deterministic offline generator.

    Model "fixed" returns the configured constant; every other model name
    (accepted verbatim) echoes the last user message as "echo: <text>".
    """

    def __init__(self, fixed_text: str = "ready.", delay_ms: int = 0):
        self.fixed_text = fixed_text
        self.delay_ms = delay_ms

    async def generate(self, request: LlmRequest) -> LlmResponse:
        start = time.perf_counter()
        if self.delay_ms:
            await asyncio.sleep(self.delay_ms / 1000)
        last_user = ""
        for msg in reversed(request.messages):
            if msg.get("role") == "user":
                last_user = msg.get("content", "")
                break
        if "__fail_llm__" in last_user:
            raise LlmFailedError("injected generation failure")
        if "__timeout_llm__" in last_user:
            raise LlmTimeoutError("injected generation timeout")
        sleep = _SLEEP_MARKER.search(last_user)
        if sleep:
            await asyncio.sleep(int(sleep.group(1)) / 1000)
        if request.model == "fixed":
            text = self.fixed_text
        else:
            text = f"echo: {last_user}"
        return LlmResponse(text=text, model=request.model, gen_ms=_elapsed_ms(start))


class OllamaLlm:
    """Client for an Ollama-compatible chat endpoint.

    Wire contract: one POST {base}/api/chat with body
    {"model": ..., "messages": [{"role", "content"}...], "stream": false}.
    Retries once on connection failure only (never on timeout), so a call
    issues at most 2 HTTP requests.
    """

    def __init__(self, base_url: str, client: httpx.AsyncClient | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = client
        self._owns_client = client is None

    def _http(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient()
        return self._client

    async def aclose(self) -> None:
        if self._client is not None and self._owns_client:
            await self._client.aclose()
            self._client = None

    async def generate(self, request: LlmRequest) -> LlmResponse:
        body = {
            "model": request.model,
            "messages": [
                {"role": m["role"], "content": m["content"]} for m in request.messages
            ],
            "stream": False,
        }
        timeout = httpx.Timeout(request.timeout_ms / 1000)
        start = time.perf_counter()
        resp = None
        for attempt in (1, 2):
            try:
                resp = await self._http().post(
                    f"{self.base_url}/api/chat", json=body, timeout=timeout
                )
                break
            except httpx.TimeoutException as exc:
                raise LlmTimeoutError(f"no response within {request.timeout_ms} ms") from exc
            except httpx.TransportError as exc:
                # Connection-level failure (refused, reset, dropped): one
                # retry; timeouts above are deliberately not retried.
                if attempt == 2:
                    raise LlmFailedError(f"connection failed twice: {exc}") from exc
            except httpx.HTTPError as exc:
                raise LlmFailedError(str(exc)) from exc
        assert resp is not None
        if resp.status_code < 200 or resp.status_code >= 300:
            raise LlmFailedError(f"HTTP {resp.status_code}", status=resp.status_code)
        raw = resp.text
        try:
            parsed = json.loads(raw)
            text = parsed["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except (ValueError, KeyError, TypeError) as exc:
            raise LlmMalformedError(f"unusable response body: {exc}", raw_body=raw) from exc
        gen_ms = _elapsed_ms(start)
        total_ns = parsed.get("total_duration")
        if isinstance(total_ns, int) and total_ns > 0:
            gen_ms = max(1, round(total_ns / 1_000_000))
        return LlmResponse(text=text, model=parsed.get("model", request.model), gen_ms=gen_ms)


class MockStt:
    """Reads the ground-truth transcript from the WAV LIST/INFO comment chunk."""

    def __init__(self, delay_ms: int = 0):
        self.delay_ms = delay_ms

    async def transcribe(self, clip: AudioClip, language: str) -> SttResult:
        start = time.perf_counter()
        if self.delay_ms:
            await asyncio.sleep(self.delay_ms / 1000)
        _, info = audio.decode_clip(clip)  # raises bad_audio on torn containers
        if info.transcript is None:
            raise SttFailedError("no transcript metadata in clip")
        if "__fail_stt__" in info.transcript:
            raise SttFailedError("injected transcription failure")
        if info.transcript == "":
            raise SttEmptyError("heard nothing")
        return SttResult(text=info.transcript, stt_ms=_elapsed_ms(start))


class CommandStt:
    """External-command transcription: WAV on stdin, transcript on stdout."""

    def __init__(self, command: list[str]):
        self.command = command

    async def transcribe(self, clip: AudioClip, language: str) -> SttResult:
        start = time.perf_counter()
        wav_bytes, _ = audio.decode_clip(clip)
        proc = await asyncio.create_subprocess_exec(
            *self.command,
            language,
            stdin=asyncio.subprocess.PIPE,
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.PIPE,
        )
        out, err = await proc.communicate(wav_bytes)
        if proc.returncode != 0:
            raise SttFailedError(f"command exited {proc.returncode}: {err.decode(errors='replace')[:200]}")
        text = out.decode("utf-8", errors="replace").strip()
        if text == "":
            raise SttEmptyError("command produced an empty transcript")
        return SttResult(text=text, stt_ms=_elapsed_ms(start))


class MockTts:
    """Sine-tone synthesizer: 16 kHz 16-bit mono, frequency keyed by voice
    gender (female 440 Hz, male 220 Hz, neutral 330 Hz) so tests can assert
    the routing, duration max(200, 50 x character count) ms. Byte-deterministic."""

    def __init__(self, delay_ms: int = 0):
        self.delay_ms = delay_ms

    async def synthesize(self, text: str, language: str, voice_gender: str) -> AudioClip:
        if self.delay_ms:
            await asyncio.sleep(self.delay_ms / 1000)
        if "__fail_tts__" in text:
            raise TtsFailedError("injected synthesis failure")
        freq = GENDER_FREQ_HZ.get(voice_gender, GENDER_FREQ_HZ["neutral"])
        duration_ms = max(MOCK_TTS_MIN_MS, MOCK_TTS_MS_PER_CHAR * len(text))
        samples = audio.sine_samples(freq, duration_ms, MOCK_TTS_SAMPLE_RATE)
        return audio.clip_from_wav(audio.build_wav(samples, MOCK_TTS_SAMPLE_RATE))


class CommandTts:
    """External-command synthesis: text on stdin, WAV bytes on stdout."""

    def __init__(self, command: list[str]):
        self.command = command

    async def synthesize(self, text: str, language: str, voice_gender: str) -> AudioClip:
        proc = await asyncio.create_subprocess_exec(
            *self.command,
            language,
            voice_gender,
            stdin=asyncio.subprocess.PIPE,
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.PIPE,
        )
        out, err = await proc.communicate(text.encode("utf-8"))
        if proc.returncode != 0:
            raise TtsFailedError(f"command exited {proc.returncode}: {err.decode(errors='replace')[:200]}")
        try:
            return audio.clip_from_wav(out)
        except Exception as exc:
            raise TtsFailedError(f"command produced unusable audio: {exc}") from exc


@dataclass
class ProviderSet:
    llm: object
    stt: object
    tts: object
    extras: dict = field(default_factory=dict)

    async def aclose(self) -> None:
        close = getattr(self.llm, "aclose", None)
        if close is not None:
            await close()


def build_providers(
    mode: str,
    llm_base_url: str = "http://127.0.0.1:11434",
    stt_command: list[str] | None = None,
    tts_command: list[str] | None = None,
) -> ProviderSet:
    """Assemble providers for the requested mode.

    mock requires no network configuration at all; live uses the
    Ollama-compatible endpoint for generation and external commands for
    speech when configured (mock speech otherwise).
    """
    if mode == "mock":
        return ProviderSet(llm=MockLlm(), stt=MockStt(), tts=MockTts())
    if mode == "live":
        return ProviderSet(
            llm=OllamaLlm(llm_base_url),
            stt=CommandStt(stt_command) if stt_command else MockStt(),
            tts=CommandTts(tts_command) if tts_command else MockTts(),
        )
    raise ValueError(f"unknown provider mode {mode!r}")
