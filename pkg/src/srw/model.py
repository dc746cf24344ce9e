"""Domain types shared by every other module. Pure values, no I/O.

All types serialize to plain dicts with stable field names; the canonical
byte encoding of those dicts lives in :mod:`srw.protocol`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from .errors import TransitionError

AVATAR_PRESETS = ("robot-blue", "robot-orange", "humanoid-gray", "abstract-orb")
VOICE_GENDERS = ("female", "male", "neutral")
SYSTEM_PROMPT_MAX_CHARS = 8000

SESSION_ID_PATTERN = re.compile(r"^[a-z]+-[a-z]+-[0-9]{3}$")

# Structural (syntax-only) language-tag check: the RFC 5646 grammar as a
# regex, including the grandfathered forms enumerated in the grammar
# itself. No registry lookup.
_LANGUAGE_TAG = re.compile(
    r"""^(?:
      (?:en-GB-oed|i-ami|i-bnn|i-default|i-enochian|i-hak|i-klingon|i-lux
         |i-mingo|i-navajo|i-pwn|i-tao|i-tay|i-tsu|sgn-BE-FR|sgn-BE-NL|sgn-CH-DE
         |art-lojban|cel-gaulish|no-bok|no-nyn|zh-guoyu|zh-hakka|zh-min
         |zh-min-nan|zh-xiang)
      |(?:x(?:-[0-9a-z]{1,8})+)
      |(?:
          (?:[a-z]{2,3}(?:-[a-z]{3}(?:-[a-z]{3}){0,2})?|[a-z]{4}|[a-z]{5,8})
          (?:-[a-z]{4})?
          (?:-(?:[a-z]{2}|[0-9]{3}))?
          (?:-(?:[0-9a-z]{5,8}|[0-9][0-9a-z]{3}))*
          (?:-[0-9a-wy-z](?:-[0-9a-z]{2,8})+)*
          (?:-x(?:-[0-9a-z]{1,8})+)?
      )
    )$""",
    re.VERBOSE | re.IGNORECASE,
)


def is_valid_language_tag(tag: str) -> bool:
    """True iff ``tag`` is a structurally valid BCP-47 language tag."""
    return isinstance(tag, str) and bool(_LANGUAGE_TAG.match(tag))


class Phase(str, Enum):
    IDLE = "idle"
    LISTENING = "listening"
    THINKING = "thinking"
    SPEAKING = "speaking"


class AvatarEvent(str, Enum):
    WAKE_OR_INPUT = "wake_or_input"
    PIPELINE_STARTED = "pipeline_started"
    REPLY_READY = "reply_ready"
    PLAYBACK_DONE = "playback_done"
    TIMEOUT = "timeout"
    ERROR_RESET = "error_reset"


# Legal (phase, event) -> next phase. error_reset is legal from every
# phase; everything not listed here is rejected.
_TRANSITIONS: dict[tuple[Phase, AvatarEvent], Phase] = {
    (Phase.IDLE, AvatarEvent.WAKE_OR_INPUT): Phase.LISTENING,
    (Phase.LISTENING, AvatarEvent.PIPELINE_STARTED): Phase.THINKING,
    (Phase.LISTENING, AvatarEvent.TIMEOUT): Phase.IDLE,
    (Phase.THINKING, AvatarEvent.REPLY_READY): Phase.SPEAKING,
    (Phase.SPEAKING, AvatarEvent.PLAYBACK_DONE): Phase.IDLE,
}
for _phase in Phase:
    _TRANSITIONS[(_phase, AvatarEvent.ERROR_RESET)] = Phase.IDLE


@dataclass(frozen=True)
class AvatarState:
    """Externally visible robot state; blinking is presentation-only."""

    phase: Phase = Phase.IDLE
    blinking: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"phase": self.phase.value, "blinking": self.blinking}


def transition(state: AvatarState, event: AvatarEvent) -> AvatarState:
    """Apply one event to the avatar state machine.

    Raises TransitionError for any (phase, event) pair outside the legal
    table; blinking passes through unchanged.
    """
    nxt = _TRANSITIONS.get((state.phase, event))
    if nxt is None:
        raise TransitionError(state.phase.value, event.value)
    return replace(state, phase=nxt)


@dataclass(frozen=True)
class InteractionModes:
    text_enabled: bool = True
    push_to_talk_enabled: bool = False
    proactive_enabled: bool = False

    def to_dict(self) -> dict[str, bool]:
        return {
            "text_enabled": self.text_enabled,
            "push_to_talk_enabled": self.push_to_talk_enabled,
            "proactive_enabled": self.proactive_enabled,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "InteractionModes":
        return cls(
            text_enabled=bool(d["text_enabled"]),
            push_to_talk_enabled=bool(d["push_to_talk_enabled"]),
            proactive_enabled=bool(d["proactive_enabled"]),
        )


@dataclass(frozen=True)
class RobotConfig:
    """The operator-editable robot character."""

    avatar_id: str = AVATAR_PRESETS[0]
    language: str = "en-US"
    modes: InteractionModes = field(default_factory=InteractionModes)
    llm_model: str = "echo"
    system_prompt: str = ""
    voice_gender: str = "neutral"

    def to_dict(self) -> dict[str, Any]:
        return {
            "avatar_id": self.avatar_id,
            "language": self.language,
            "modes": self.modes.to_dict(),
            "llm_model": self.llm_model,
            "system_prompt": self.system_prompt,
            "voice_gender": self.voice_gender,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RobotConfig":
        return cls(
            avatar_id=d["avatar_id"],
            language=d["language"],
            modes=InteractionModes.from_dict(d["modes"]),
            llm_model=d["llm_model"],
            system_prompt=d["system_prompt"],
            voice_gender=d["voice_gender"],
        )


def default_config() -> RobotConfig:
    return RobotConfig()


def validate_config(config: RobotConfig) -> list[str]:
    """Check every RobotConfig invariant; returns all violations (empty = ok).

    Total function: never raises, always reports the full violation list
    rather than stopping at the first.
    """
    violations: list[str] = []
    if config.avatar_id not in AVATAR_PRESETS:
        violations.append(
            f"avatar_id: unknown preset {config.avatar_id!r} (expected one of {', '.join(AVATAR_PRESETS)})"
        )
    if not is_valid_language_tag(config.language):
        violations.append(f"language: {config.language!r} is not a structurally valid BCP-47 tag")
    m = config.modes
    if not (m.text_enabled or m.push_to_talk_enabled or m.proactive_enabled):
        violations.append("no interaction mode enabled")
    if not isinstance(config.llm_model, str) or not config.llm_model:
        violations.append("llm_model: must be a nonempty string")
    if not isinstance(config.system_prompt, str):
        violations.append("system_prompt: must be a string")
    elif len(config.system_prompt) > SYSTEM_PROMPT_MAX_CHARS:
        violations.append(
            f"system_prompt: {len(config.system_prompt)} characters exceeds the {SYSTEM_PROMPT_MAX_CHARS} cap"
        )
    if config.voice_gender not in VOICE_GENDERS:
        violations.append(f"voice_gender: must be one of {', '.join(VOICE_GENDERS)}")
    return violations


@dataclass(frozen=True)
class CommunicationSession:
    """One live or closed operator session."""

    id: str
    created_at: int  # epoch ms
    config: RobotConfig
    config_version: int = 1
    status: str = "active"  # active | closed
    robot_connected: bool = False
    control_connected: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "config": self.config.to_dict(),
            "config_version": self.config_version,
            "status": self.status,
            "robot_connected": self.robot_connected,
            "control_connected": self.control_connected,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CommunicationSession":
        return cls(
            id=d["id"],
            created_at=d["created_at"],
            config=RobotConfig.from_dict(d["config"]),
            config_version=d["config_version"],
            status=d["status"],
            robot_connected=d["robot_connected"],
            control_connected=d["control_connected"],
        )


@dataclass(frozen=True)
class AudioClip:
    """Base64-wrapped WAV payload as carried on the wire."""

    payload_b64: str
    sample_rate_hz: int
    duration_ms: int
    mime: str = "audio/wav"

    def to_dict(self) -> dict[str, Any]:
        return {
            "payload_b64": self.payload_b64,
            "mime": self.mime,
            "sample_rate_hz": self.sample_rate_hz,
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AudioClip":
        return cls(
            payload_b64=d["payload_b64"],
            mime=d["mime"],
            sample_rate_hz=d["sample_rate_hz"],
            duration_ms=d["duration_ms"],
        )


@dataclass(frozen=True)
class ChatMessage:
    """One persisted utterance (user or robot)."""

    id: str
    session_id: str
    turn_index: int
    author: str  # user | robot
    text: str
    created_at: int  # epoch ms
    modality: str | None = None  # text | voice_button | voice_wake (user only)
    in_reply_to: str | None = None  # user message id (robot only)
    llm_model_used: str | None = None  # robot only
    config_version_used: int | None = None  # robot only
    latency_ms: dict[str, int] | None = None  # {stt?, llm, tts} (robot only)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "id": self.id,
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "author": self.author,
            "text": self.text,
            "created_at": self.created_at,
        }
        if self.modality is not None:
            rec["modality"] = self.modality
        if self.in_reply_to is not None:
            rec["in_reply_to"] = self.in_reply_to
        if self.llm_model_used is not None:
            rec["llm_model_used"] = self.llm_model_used
        if self.config_version_used is not None:
            rec["config_version_used"] = self.config_version_used
        if self.latency_ms is not None:
            rec["latency_ms"] = dict(self.latency_ms)
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ChatMessage":
        return cls(
            id=rec["id"],
            session_id=rec["session_id"],
            turn_index=rec["turn_index"],
            author=rec["author"],
            text=rec["text"],
            created_at=rec["created_at"],
            modality=rec.get("modality"),
            in_reply_to=rec.get("in_reply_to"),
            llm_model_used=rec.get("llm_model_used"),
            config_version_used=rec.get("config_version_used"),
            latency_ms=rec.get("latency_ms"),
        )
