"""One user input -> one robot reply: modality handling, wake windows,
transcription, prompt assembly, generation, synthesis, state transitions,
persistence, and latency accounting.

Each session has exactly one executor processing its events strictly in
arrival order; different sessions run fully in parallel. Wake-window
timers fire asynchronously but deliver their timeout into the same
serialized event stream, so nothing in here is reentrant.
"""

from __future__ import annotations

import asyncio
import logging
import math
import time
import uuid
from dataclasses import dataclass, field

from .errors import (
    LlmFailedError,
    LlmMalformedError,
    LlmTimeoutError,
    ModeDisabledError,
    NoWakeWindowError,
    SessionClosedError,
    SrwError,
    SttEmptyError,
    TransitionError,
    TtsFailedError,
)
from .model import (
    AudioClip,
    AvatarEvent,
    AvatarState,
    ChatMessage,
    Phase,
    RobotConfig,
    transition,
)
from .protocol import now_ms
from .providers import LlmRequest, ProviderSet
from .registry import Channel, SessionRegistry
from .store import Store, fresh_message

log = logging.getLogger(__name__)

WAKE_WINDOW_MS = 5000
PLAYBACK_TIMEOUT_MS = 60000
DEFAULT_HISTORY_TURNS = 20


@dataclass(frozen=True)
class TurnRequest:
    session_id: str
    modality: str  # text | voice_button | voice_wake
    text: str | None = None
    audio: AudioClip | None = None

    def __post_init__(self):
        if self.modality == "text":
            if self.text is None or self.audio is not None:
                raise ValueError("text modality carries text and no audio")
        elif self.modality in ("voice_button", "voice_wake"):
            if self.audio is None or self.text is not None:
                raise ValueError(f"{self.modality} modality carries audio and no text")
        else:
            raise ValueError(f"unknown modality {self.modality!r}")


@dataclass(frozen=True)
class TurnResult:
    user_message: ChatMessage
    robot_message: ChatMessage
    reply_audio: AudioClip | None
    latency_ms: dict[str, int]
    degraded: bool = False


@dataclass
class WakeWindow:
    session_id: str
    opened_at: int  # epoch ms
    deadline: int  # opened_at + WAKE_WINDOW_MS
    state: str = "open"  # open | consumed | expired
    deadline_perf: float = 0.0  # loop-clock deadline used for timing


def assemble_prompt(
    system_prompt: str,
    history: list[ChatMessage],
    user_text: str,
    window_turns: int = DEFAULT_HISTORY_TURNS,
) -> list[dict[str, str]]:
    """Build the ordered message list for the generator.

    Output: optional system message (omitted entirely when the prompt is
    empty), then the last ``window_turns`` turns of history mapped to
    alternating user/assistant roles (older turns dropped whole, never
    split), then the new user text. Content is passed through untouched.
    """
    turns: list[list[ChatMessage]] = []
    for msg in history:
        if msg.author == "user" or not turns:
            turns.append([msg])
        else:
            turns[-1].append(msg)
    kept = turns[len(turns) - window_turns :] if window_turns < len(turns) else turns

    out: list[dict[str, str]] = []
    if system_prompt:
        out.append({"role": "system", "content": system_prompt})
    for turn in kept:
        for msg in turn:
            role = "user" if msg.author == "user" else "assistant"
            out.append({"role": role, "content": msg.text})
    out.append({"role": "user", "content": user_text})
    return out


class LatencyRecorder:
    """Per-turn stage timings; each stage may be recorded exactly once."""

    def __init__(self) -> None:
        self.stages: dict[str, int] = {}

    def record(self, stage: str, elapsed_ms: int) -> None:
        if stage in self.stages:
            # Bug signal, not a user-facing condition: the turn aborts.
            raise RuntimeError(f"latency stage {stage!r} recorded twice")
        self.stages[stage] = elapsed_ms

    def stopwatch(self) -> "_Stopwatch":
        return _Stopwatch()


class _Stopwatch:
    def __init__(self) -> None:
        self.start = time.perf_counter()

    def elapsed_ms(self) -> int:
        return max(1, math.ceil((time.perf_counter() - self.start) * 1000))


@dataclass
class _TurnEvent:
    request: TurnRequest
    sink: Channel | None
    in_seq: int | None
    arrival_perf: float
    arrival_ms: int
    future: asyncio.Future


@dataclass
class _WakeEvent:
    sink: Channel | None
    in_seq: int | None
    arrival_perf: float
    arrival_ms: int
    future: asyncio.Future


@dataclass
class _TimeoutEvent:
    window: WakeWindow


class SessionRuntime:
    """Serialized executor for one session's dialogue events."""

    def __init__(
        self,
        session_id: str,
        registry: SessionRegistry,
        store: Store,
        providers: ProviderSet,
        history_turns: int = DEFAULT_HISTORY_TURNS,
        wake_window_ms: int = WAKE_WINDOW_MS,
        playback_timeout_ms: int = PLAYBACK_TIMEOUT_MS,
    ):
        self.session_id = session_id
        self.registry = registry
        self.store = store
        self.providers = providers
        self.history_turns = history_turns
        self.wake_window_ms = wake_window_ms
        self.playback_timeout_ms = playback_timeout_ms

        self.avatar = AvatarState()
        self.wake_window: WakeWindow | None = None
        self._wake_timer: asyncio.Task | None = None
        self._playback: asyncio.Future | None = None
        self._queue: asyncio.Queue = asyncio.Queue()
        self._worker: asyncio.Task | None = None
        self._current: _TurnEvent | _WakeEvent | None = None
        self._closed = False

    def start(self) -> None:
        if self._worker is None:
            self._worker = asyncio.get_running_loop().create_task(self._run())

    @property
    def closed(self) -> bool:
        return self._closed

    # -- entry points (called by the gateway reader or tests) ------------

    def submit_turn(
        self, request: TurnRequest, sink: Channel | None = None, in_seq: int | None = None
    ) -> asyncio.Future:
        """Queue one turn; the returned future resolves with its TurnResult."""
        self._ensure_open()
        ev = _TurnEvent(
            request=request,
            sink=sink,
            in_seq=in_seq,
            arrival_perf=time.perf_counter(),
            arrival_ms=now_ms(),
            future=asyncio.get_running_loop().create_future(),
        )
        self._queue.put_nowait(ev)
        return ev.future

    def submit_wake(self, sink: Channel | None = None, in_seq: int | None = None) -> asyncio.Future:
        self._ensure_open()
        ev = _WakeEvent(
            sink=sink,
            in_seq=in_seq,
            arrival_perf=time.perf_counter(),
            arrival_ms=now_ms(),
            future=asyncio.get_running_loop().create_future(),
        )
        self._queue.put_nowait(ev)
        return ev.future

    def confirm_playback(self, blinking: bool | None = None) -> bool:
        """Robot screen reported playback finished; True if a turn was waiting."""
        if blinking is not None and blinking != self.avatar.blinking:
            # Presentation-only flag mirrored into heartbeats; no transition.
            self.avatar = AvatarState(phase=self.avatar.phase, blinking=blinking)
        if self._playback is not None and not self._playback.done():
            self._playback.set_result(True)
            return True
        return False

    def robot_detached(self) -> None:
        # A dead robot screen must not wedge the turn for the full
        # playback timeout; nothing is going to play the clip.
        if self._playback is not None and not self._playback.done():
            self._playback.set_result(False)

    def mark_closed(self) -> None:
        self._closed = True

    async def shutdown(self) -> None:
        """Abort the in-flight turn (error_reset), drain the queue."""
        self._closed = True
        if self._worker is not None:
            self._worker.cancel()
            try:
                await self._worker
            except asyncio.CancelledError:
                pass
            self._worker = None
        self._cancel_wake_timer()
        if self.wake_window is not None and self.wake_window.state == "open":
            self.wake_window.state = "expired"
            self.wake_window = None
        self._reset_idle()
        while not self._queue.empty():
            ev = self._queue.get_nowait()
            if isinstance(ev, (_TurnEvent, _WakeEvent)):
                exc = SessionClosedError(f"session {self.session_id} closed")
                self._answer_error(ev, exc)
                if not ev.future.done():
                    ev.future.set_exception(exc)
                    ev.future.exception()  # consumed; avoid unretrieved warnings

    def _ensure_open(self) -> None:
        if self._closed:
            raise SessionClosedError(f"session {self.session_id} closed")
        if self._worker is None:
            raise RuntimeError("runtime not started")

    # -- worker ------------------------------------------------------------

    async def _run(self) -> None:
        while True:
            ev = await self._queue.get()
            self._current = ev
            try:
                if isinstance(ev, _TurnEvent):
                    await self._handle_turn(ev)
                elif isinstance(ev, _WakeEvent):
                    self._handle_wake(ev)
                elif isinstance(ev, _TimeoutEvent):
                    self._handle_wake_timeout(ev)
            except asyncio.CancelledError:
                self._reset_idle()
                if isinstance(ev, (_TurnEvent, _WakeEvent)) and not ev.future.done():
                    ev.future.set_exception(SessionClosedError("turn aborted: session closed"))
                    ev.future.exception()
                raise
            except Exception:
                log.exception("session %s: event handler crashed", self.session_id)
            finally:
                self._current = None

    async def _handle_turn(self, ev: _TurnEvent) -> None:
        try:
            result = await self._execute_turn(ev)
        except SrwError as exc:
            self._reset_idle()
            self._answer_error(ev, exc)
            self._resolve_exc(ev, exc)
        except asyncio.CancelledError:
            raise
        except Exception as exc:
            log.exception("session %s: turn failed unexpectedly", self.session_id)
            self._reset_idle()
            internal = SrwError(f"internal error: {exc}")
            self._answer_error(ev, internal)
            self._resolve_exc(ev, exc)
        else:
            if not ev.future.done():
                ev.future.set_result(result)

    @staticmethod
    def _resolve_exc(ev, exc: BaseException) -> None:
        if not ev.future.done():
            ev.future.set_exception(exc)
            ev.future.exception()

    def _answer_error(self, ev, exc: SrwError) -> None:
        if ev.sink is not None:
            payload = {"code": exc.code, "message": exc.message}
            if ev.in_seq is not None:
                payload["in_reply_to"] = ev.in_seq
            ev.sink.enqueue("error", payload)

    # -- the turn itself ----------------------------------------------------

    async def _execute_turn(self, ev: _TurnEvent) -> TurnResult:
        req = ev.request
        session = self.registry.get_session(self.session_id)
        if session.status != "active" or self._closed:
            raise SessionClosedError(f"session {self.session_id} closed")
        # Config snapshot: an update accepted mid-turn applies from the
        # next turn; config_version_used makes the boundary auditable.
        config = session.config
        config_version = session.config_version
        self._check_mode(req.modality, config)
        if req.modality == "voice_wake":
            window = self.wake_window
            if window is None or window.state != "open" or ev.arrival_perf > window.deadline_perf:
                raise NoWakeWindowError("no open wake window for this session")

        recorder = LatencyRecorder()
        if self.avatar.phase == Phase.IDLE:
            self._transition(AvatarEvent.WAKE_OR_INPUT)
        self._consume_window()

        user_text = req.text
        if req.modality != "text":
            watch = recorder.stopwatch()
            try:
                stt = await self.providers.stt.transcribe(req.audio, config.language)
                user_text = stt.text
            except SttEmptyError:
                user_text = ""  # heard silence: still a turn, empty input
            recorder.record("stt", watch.elapsed_ms())
        assert user_text is not None

        self._transition(AvatarEvent.PIPELINE_STARTED)

        history = self.store.fetch_history(self.session_id)
        messages = assemble_prompt(config.system_prompt, history, user_text, self.history_turns)
        watch = recorder.stopwatch()
        try:
            llm = await self.providers.llm.generate(
                LlmRequest(model=config.llm_model, messages=messages)
            )
        except (LlmFailedError, LlmTimeoutError, LlmMalformedError):
            # The user's side of the turn is kept even when generation
            # fails; only the reply is missing.
            recorder.record("llm", watch.elapsed_ms())
            user_msg = self._persist_user(req, user_text)
            self._forward_user_text(user_msg)
            raise
        recorder.record("llm", watch.elapsed_ms())

        self._transition(AvatarEvent.REPLY_READY)

        degraded = False
        reply_audio: AudioClip | None = None
        watch = recorder.stopwatch()
        try:
            reply_audio = await self.providers.tts.synthesize(
                llm.text, config.language, config.voice_gender
            )
        except TtsFailedError:
            degraded = True  # reply text survives; audio is absent
        recorder.record("tts", watch.elapsed_ms())

        user_msg = self._persist_user(req, user_text)
        robot_msg = self.store.append_chat_message(
            fresh_message(
                self.session_id,
                "robot",
                llm.text,
                uuid.uuid4().hex,
                in_reply_to=user_msg.id,
                llm_model_used=config.llm_model,
                config_version_used=config_version,
                latency_ms=dict(recorder.stages),
            )
        )
        self._forward_user_text(user_msg)

        reply_payload: dict = {
            "in_reply_to": user_msg.id,
            "text": llm.text,
            "latency_ms": dict(recorder.stages),
        }
        if degraded:
            reply_payload["degraded"] = True
        handle = self.registry.handle(self.session_id)
        if handle.robot_channel is not None:
            robot_payload = dict(reply_payload)
            if reply_audio is not None:
                robot_payload["audio"] = reply_audio.to_dict()
            handle.robot_channel.enqueue("robot_reply", robot_payload)
        for ch in handle.control_channels:
            ch.enqueue("robot_reply", dict(reply_payload))  # audio elided

        total_ms = max(1, math.ceil((time.perf_counter() - ev.arrival_perf) * 1000))

        await self._await_playback()
        self._transition(AvatarEvent.PLAYBACK_DONE)

        return TurnResult(
            user_message=user_msg,
            robot_message=robot_msg,
            reply_audio=reply_audio,
            latency_ms={**recorder.stages, "total": total_ms},
            degraded=degraded,
        )

    def _check_mode(self, modality: str, config: RobotConfig) -> None:
        enabled = {
            "text": config.modes.text_enabled,
            "voice_button": config.modes.push_to_talk_enabled,
            "voice_wake": config.modes.proactive_enabled,
        }[modality]
        if not enabled:
            raise ModeDisabledError(f"{modality} input is disabled in the current config")

    def _persist_user(self, req: TurnRequest, user_text: str) -> ChatMessage:
        return self.store.append_chat_message(
            fresh_message(
                self.session_id, "user", user_text, uuid.uuid4().hex, modality=req.modality
            )
        )

    def _forward_user_text(self, user_msg: ChatMessage) -> None:
        # Control panels render the transcript live; they get the user's
        # text (post-transcription) as a user_text envelope.
        handle = self.registry.handle(self.session_id)
        for ch in handle.control_channels:
            ch.enqueue("user_text", {"text": user_msg.text})

    async def _await_playback(self) -> None:
        fut = asyncio.get_running_loop().create_future()
        self._playback = fut
        try:
            await asyncio.wait_for(fut, timeout=self.playback_timeout_ms / 1000)
        except asyncio.TimeoutError:
            log.warning(
                "session %s: no playback confirmation within %d ms",
                self.session_id,
                self.playback_timeout_ms,
            )
        finally:
            self._playback = None

    # -- wake windows --------------------------------------------------------

    def _handle_wake(self, ev: _WakeEvent) -> None:
        try:
            session = self.registry.get_session(self.session_id)
            if session.status != "active" or self._closed:
                raise SessionClosedError(f"session {self.session_id} closed")
            if not session.config.modes.proactive_enabled:
                raise ModeDisabledError("proactive mode is disabled in the current config")
            if self.wake_window is not None and self.wake_window.state == "open":
                # Duplicate wake inside the window: same window, deadline
                # unchanged (a hot microphone must not stretch it forever).
                if not ev.future.done():
                    ev.future.set_result(self.wake_window)
                return
            if self.avatar.phase != Phase.IDLE:
                raise TransitionError(self.avatar.phase.value, AvatarEvent.WAKE_OR_INPUT.value)
            window = WakeWindow(
                session_id=self.session_id,
                opened_at=ev.arrival_ms,
                deadline=ev.arrival_ms + self.wake_window_ms,
                deadline_perf=ev.arrival_perf + self.wake_window_ms / 1000,
            )
            self.wake_window = window
            self._transition(AvatarEvent.WAKE_OR_INPUT)
            self._wake_timer = asyncio.get_running_loop().create_task(
                self._wake_timeout_task(window)
            )
        except SrwError as exc:
            self._answer_error(ev, exc)
            self._resolve_exc(ev, exc)
        else:
            if not ev.future.done():
                ev.future.set_result(self.wake_window)

    async def _wake_timeout_task(self, window: WakeWindow) -> None:
        delay = max(0.0, window.deadline_perf - time.perf_counter())
        await asyncio.sleep(delay)
        self._queue.put_nowait(_TimeoutEvent(window))

    def _handle_wake_timeout(self, ev: _TimeoutEvent) -> None:
        window = ev.window
        if window.state != "open":
            return  # consumed (or already expired): never a late idle flip
        window.state = "expired"
        if self.wake_window is window:
            self.wake_window = None
        if self.avatar.phase == Phase.LISTENING:
            self._transition(AvatarEvent.TIMEOUT)

    def _consume_window(self) -> None:
        # Any turn ends the listening window: input arrived, the robot is
        # no longer waiting for a wake utterance.
        if self.wake_window is not None and self.wake_window.state == "open":
            self.wake_window.state = "consumed"
            self.wake_window = None
        self._cancel_wake_timer()

    def _cancel_wake_timer(self) -> None:
        if self._wake_timer is not None:
            self._wake_timer.cancel()
            self._wake_timer = None

    # -- avatar state ---------------------------------------------------------

    def _transition(self, event: AvatarEvent) -> None:
        self.avatar = transition(self.avatar, event)
        self._emit_state()

    def _reset_idle(self) -> None:
        if self.avatar.phase != Phase.IDLE:
            self.avatar = transition(self.avatar, AvatarEvent.ERROR_RESET)
            self._emit_state()

    def _emit_state(self) -> None:
        try:
            handle = self.registry.handle(self.session_id)
        except SrwError:
            return
        if handle.robot_channel is not None:
            handle.robot_channel.enqueue("state_update", self.avatar.to_dict())

    def emit_state_snapshot(self) -> None:
        """Push the current avatar state to a freshly attached robot screen."""
        self._emit_state()
