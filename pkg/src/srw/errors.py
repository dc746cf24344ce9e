"""Error types shared across the toolkit.

Every error carries a stable ``code`` string; the gateway maps these
one-to-one onto typed ``error`` envelopes, so codes are part of the wire
contract and must not be renamed casually.
"""

from __future__ import annotations


class SrwError(Exception):
    """Base class; ``code`` is the wire-visible error identifier."""

    code = "internal"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


class ConfigValidationError(SrwError):
    code = "invalid_config"

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class TransitionError(SrwError):
    code = "invalid_transition"

    def __init__(self, phase: str, event: str):
        super().__init__(f"no transition for (state={phase}, event={event})")
        self.phase = phase
        self.event = event


class NotFoundError(SrwError):
    code = "not_found"


class VersionConflictError(SrwError):
    code = "version_conflict"

    def __init__(self, expected: int, current: int):
        super().__init__(f"expected_version {expected} does not match current {current}")
        self.expected = expected
        self.current = current


class RobotAlreadyConnectedError(SrwError):
    code = "robot_already_connected"


class SessionClosedError(SrwError):
    code = "session_closed"


class IdExhaustionError(SrwError):
    code = "id_exhausted"


class StoreError(SrwError):
    code = "store_failed"


class ModeDisabledError(SrwError):
    code = "mode_disabled"


class NoWakeWindowError(SrwError):
    code = "no_wake_window"


# Wire-protocol codec errors (distinct codes so the gateway can answer
# each with a typed error envelope).

class ProtocolError(SrwError):
    code = "protocol_error"


class ParseError(ProtocolError):
    code = "parse_error"


class UnsupportedVersionError(ProtocolError):
    code = "unsupported_version"


class UnknownTypeError(ProtocolError):
    code = "unknown_type"


class SchemaViolationError(ProtocolError):
    code = "schema_violation"

    def __init__(self, field: str, message: str = ""):
        super().__init__(message or f"schema violation at {field}")
        self.field = field


# Provider errors.

class ProviderError(SrwError):
    code = "provider_failed"


class BadAudioError(ProviderError):
    code = "bad_audio"


class SttFailedError(ProviderError):
    code = "stt_failed"


class SttEmptyError(ProviderError):
    """Transcription succeeded but heard nothing; not a turn-fatal failure."""

    code = "stt_empty"


class LlmFailedError(ProviderError):
    code = "llm_failed"

    def __init__(self, message: str = "", status: int | None = None):
        super().__init__(message)
        self.status = status


class LlmTimeoutError(ProviderError):
    code = "llm_timeout"


class LlmMalformedError(ProviderError):
    code = "llm_malformed"

    def __init__(self, message: str = "", raw_body: str = ""):
        super().__init__(message)
        self.raw_body = raw_body  # retained for logs


class TtsFailedError(ProviderError):
    code = "tts_failed"
