"""The single envelope format used on both WebSocket channels.

Encoding is canonical and bit-exact: lexicographic key order, no
insignificant whitespace, timestamps as integer epoch-ms. Two equal
envelopes always encode to byte-identical frames, which makes frames
hashable, diffable, and replayable. Decoding tolerates any key order and
whitespace but enforces the same closed schemas.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import (
    ParseError,
    SchemaViolationError,
    UnknownTypeError,
    UnsupportedVersionError,
)

PROTOCOL_VERSION = 1

Check = Callable[[Any, str], None]


def now_ms() -> int:
    return int(time.time() * 1000)


def canonical_dumps(value: Any) -> str:
    """Canonical JSON text: sorted keys, compact separators, raw UTF-8."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _fail(path: str, message: str) -> None:
    raise SchemaViolationError(path, f"{path}: {message}")


def _string(value: Any, path: str) -> None:
    if not isinstance(value, str):
        _fail(path, "expected string")


def _nonempty_string(value: Any, path: str) -> None:
    if not isinstance(value, str) or not value:
        _fail(path, "expected nonempty string")


def _boolean(value: Any, path: str) -> None:
    if not isinstance(value, bool):
        _fail(path, "expected boolean")


def _int_min(minimum: int) -> Check:
    def check(value: Any, path: str) -> None:
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            _fail(path, f"expected integer >= {minimum}")

    return check


def _enum(*allowed: str) -> Check:
    def check(value: Any, path: str) -> None:
        if value not in allowed:
            _fail(path, f"expected one of {', '.join(allowed)}")

    return check


def _const(expected: Any) -> Check:
    def check(value: Any, path: str) -> None:
        if value != expected:
            _fail(path, f"expected {expected!r}")

    return check


def _record(schema: dict[str, tuple[Check, bool]]) -> Check:
    def check(value: Any, path: str) -> None:
        if not isinstance(value, dict):
            _fail(path, "expected object")
        for key in value:
            if key not in schema:
                _fail(f"{path}.{key}", "unknown field")
        for key, (inner, required) in schema.items():
            if key not in value:
                if required:
                    _fail(f"{path}.{key}", "missing required field")
                continue
            inner(value[key], f"{path}.{key}")

    return check


_AUDIO = _record(
    {
        "payload_b64": (_string, True),
        "mime": (_const("audio/wav"), True),
        "sample_rate_hz": (_int_min(1), True),
        "duration_ms": (_int_min(1), True),
    }
)

_LATENCY = _record(
    {
        "stt": (_int_min(0), False),
        "llm": (_int_min(0), True),
        "tts": (_int_min(0), True),
    }
)

_MODES = _record(
    {
        "text_enabled": (_boolean, True),
        "push_to_talk_enabled": (_boolean, True),
        "proactive_enabled": (_boolean, True),
    }
)

_CONFIG = _record(
    {
        "avatar_id": (_nonempty_string, True),
        "language": (_nonempty_string, True),
        "modes": (_MODES, True),
        "llm_model": (_string, True),
        "system_prompt": (_string, True),
        "voice_gender": (_enum("female", "male", "neutral"), True),
    }
)

_ROBOT_STATE = _record(
    {
        "phase": (_enum("idle", "listening", "thinking", "speaking"), True),
        "blinking": (_boolean, True),
    }
)

PAYLOAD_SCHEMAS: dict[str, Check] = {
    "user_text": _record({"text": (_string, True)}),
    "user_audio": _record(
        {
            "audio": (_AUDIO, True),
            "modality": (_enum("voice_button", "voice_wake"), True),
        }
    ),
    "wake_detected": _record({}),
    "robot_reply": _record(
        {
            "in_reply_to": (_nonempty_string, True),
            "text": (_string, True),
            "latency_ms": (_LATENCY, True),
            "audio": (_AUDIO, False),
            "degraded": (_boolean, False),
        }
    ),
    "state_update": _ROBOT_STATE,
    "config_update": _record(
        {
            "config": (_CONFIG, True),
            "config_version": (_int_min(1), True),
        }
    ),
    "heartbeat": _record(
        {
            "robot_state": (_ROBOT_STATE, True),
            "robot_connected": (_boolean, True),
            "control_connected": (_boolean, True),
            "config_version": (_int_min(1), True),
        }
    ),
    "error": _record(
        {
            "code": (_nonempty_string, True),
            "message": (_string, True),
            "in_reply_to": (_int_min(0), False),
        }
    ),
    "session_closed": _record({"reason": (_string, True)}),
}

ENVELOPE_TYPES = tuple(PAYLOAD_SCHEMAS)

_ENVELOPE_KEYS = {"v", "type", "session_id", "seq", "ts", "payload"}


@dataclass(frozen=True)
class MessageEnvelope:
    type: str
    session_id: str
    seq: int
    ts: int
    payload: dict[str, Any] = field(default_factory=dict)
    v: int = PROTOCOL_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {
            "v": self.v,
            "type": self.type,
            "session_id": self.session_id,
            "seq": self.seq,
            "ts": self.ts,
            "payload": self.payload,
        }


def validate_envelope(env: MessageEnvelope) -> None:
    """Full schema check; raises SchemaViolationError naming the field."""
    if env.v != PROTOCOL_VERSION:
        _fail("v", f"expected {PROTOCOL_VERSION}")
    if env.type not in PAYLOAD_SCHEMAS:
        _fail("type", f"unknown envelope type {env.type!r}")
    _nonempty_string(env.session_id, "session_id")
    _int_min(0)(env.seq, "seq")
    _int_min(0)(env.ts, "ts")
    PAYLOAD_SCHEMAS[env.type](env.payload, "payload")


def encode(env: MessageEnvelope) -> str:
    """Canonical UTF-8 text frame for a valid envelope."""
    validate_envelope(env)
    return canonical_dumps(env.to_dict())


def decode(frame: str) -> MessageEnvelope:
    """Parse and strictly validate one text frame.

    Error codes are distinct so the gateway can answer each failure with
    a typed error envelope: parse_error, unsupported_version,
    unknown_type, schema_violation.
    """
    try:
        raw = json.loads(frame)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(f"malformed frame: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError("frame is not an object")
    for key in raw:
        if key not in _ENVELOPE_KEYS:
            _fail(key, "unknown field")
    if "v" not in raw:
        _fail("v", "missing required field")
    if raw["v"] != PROTOCOL_VERSION:
        raise UnsupportedVersionError(f"unsupported protocol version {raw['v']!r}")
    if "type" not in raw:
        _fail("type", "missing required field")
    if raw["type"] not in PAYLOAD_SCHEMAS:
        raise UnknownTypeError(f"unknown envelope type {raw['type']!r}")
    for required in ("session_id", "seq", "ts", "payload"):
        if required not in raw:
            _fail(required, "missing required field")
    env = MessageEnvelope(
        type=raw["type"],
        session_id=raw["session_id"],
        seq=raw["seq"],
        ts=raw["ts"],
        payload=raw["payload"],
        v=raw["v"],
    )
    validate_envelope(env)
    return env


class SeqCounter:
    """Outbound per-connection counter: 0, 1, 2, ... one per sent envelope."""

    def __init__(self) -> None:
        self._next = 0

    def next(self) -> int:
        value = self._next
        self._next += 1
        return value

    @property
    def sent(self) -> int:
        return self._next


class SeqValidator:
    """Inbound gap/repeat detector.

    check() returns True when the sequence is as expected; a gap or
    repeat returns False (the frame should be answered with a
    seq_violation error) and resynchronizes so one fault is reported
    once, not forever.
    """

    def __init__(self) -> None:
        self.expected = 0

    def check(self, seq: int) -> bool:
        if seq == self.expected:
            self.expected += 1
            return True
        self.expected = seq + 1
        return False
