"""Session lifecycle: human-readable IDs, config versioning with optimistic
concurrency, channel attachment, and broadcast fan-out.

All mutations of one session are serialized behind a per-session lock;
operations on different sessions proceed in parallel. Broadcasts never
block: channels expose a non-blocking enqueue and deal with their own
backpressure.
"""

from __future__ import annotations

import asyncio
import dataclasses
import random
from dataclasses import dataclass, field
from typing import Any, Protocol

from .errors import (
    ConfigValidationError,
    IdExhaustionError,
    NotFoundError,
    RobotAlreadyConnectedError,
    SessionClosedError,
    VersionConflictError,
)
from .model import CommunicationSession, RobotConfig, validate_config
from .protocol import now_ms
from .store import Store

ADJECTIVES = (
    "able", "agile", "amber", "ancient", "bold", "brave", "bright", "brisk",
    "calm", "candid", "cheery", "civil", "clever", "cosmic", "cozy", "crisp",
    "daring", "deft", "dapper", "eager", "early", "easy", "fair", "fancy",
    "fleet", "fond", "frank", "free", "gentle", "giddy", "glad", "golden",
    "grand", "happy", "hardy", "hearty", "humble", "jolly", "keen", "kind",
    "lively", "loyal", "lucid", "lucky", "mellow", "merry", "mighty", "modest",
    "nimble", "noble", "patient", "perky", "plucky", "polite", "proud", "quick",
    "quiet", "rapid", "robust", "rosy", "shiny", "silent", "smart", "snappy",
    "solid", "spry", "steady", "sturdy", "sunny", "swift", "tidy", "trusty",
    "upbeat", "vivid", "warm", "wise", "witty", "zesty",
)

NOUNS = (
    "acorn", "badger", "beacon", "bison", "bobcat", "breeze", "brook", "cedar",
    "comet", "condor", "coral", "crane", "cricket", "dolphin", "ember", "falcon",
    "fern", "finch", "fox", "gecko", "glacier", "harbor", "hawk", "heron",
    "ibis", "jaguar", "kestrel", "lagoon", "lark", "lemur", "linden", "lynx",
    "maple", "marmot", "meadow", "mole", "moose", "narwhal", "nectar", "newt",
    "oriole", "osprey", "otter", "owl", "panda", "pebble", "pelican", "pine",
    "plover", "prairie", "puffin", "quail", "raven", "reef", "robin", "salmon",
    "sparrow", "spruce", "summit", "swan", "tern", "thicket", "tiger", "trout",
    "tundra", "walrus", "wren", "zephyr",
)


class Channel(Protocol):
    """Anything that can receive outbound envelopes without blocking."""

    def enqueue(self, env_type: str, payload: dict[str, Any]) -> None: ...


@dataclass
class SessionHandle:
    session: CommunicationSession
    robot_channel: Channel | None = None
    control_channels: list[Channel] = field(default_factory=list)

    def all_channels(self) -> list[Channel]:
        channels: list[Channel] = []
        if self.robot_channel is not None:
            channels.append(self.robot_channel)
        channels.extend(self.control_channels)
        return channels


CONFIG_FIELDS = {"avatar_id", "language", "modes", "llm_model", "system_prompt", "voice_gender"}
MODE_FIELDS = {"text_enabled", "push_to_talk_enabled", "proactive_enabled"}


def merge_config(config: RobotConfig, patch: dict[str, Any]) -> RobotConfig:
    """Apply a partial config patch; modes merge per-flag."""
    unknown = set(patch) - CONFIG_FIELDS
    if unknown:
        raise ConfigValidationError([f"unknown config field {k!r}" for k in sorted(unknown)])
    base = config.to_dict()
    for key, value in patch.items():
        if key == "modes":
            if not isinstance(value, dict):
                raise ConfigValidationError(["modes: expected an object of flags"])
            bad = set(value) - MODE_FIELDS
            if bad:
                raise ConfigValidationError([f"unknown mode flag {k!r}" for k in sorted(bad)])
            for flag, flag_value in value.items():
                if not isinstance(flag_value, bool):
                    raise ConfigValidationError([f"modes.{flag}: expected boolean"])
            base["modes"] = {**base["modes"], **value}
        else:
            base[key] = value
    try:
        merged = RobotConfig.from_dict(base)
    except (KeyError, TypeError) as exc:
        raise ConfigValidationError([f"malformed config patch: {exc}"]) from exc
    return merged


class SessionRegistry:
    def __init__(self, store: Store, rng: random.Random | None = None):
        self._store = store
        self._rng = rng if rng is not None else random.Random()
        self._handles: dict[str, SessionHandle] = {}
        self._locks: dict[str, asyncio.Lock] = {}

    # -- lookup ---------------------------------------------------------

    def _lock(self, session_id: str) -> asyncio.Lock:
        lock = self._locks.get(session_id)
        if lock is None:
            lock = self._locks[session_id] = asyncio.Lock()
        return lock

    def handle(self, session_id: str) -> SessionHandle:
        h = self._handles.get(session_id)
        if h is None:
            stored = self._store.load_communication(session_id)
            if stored is None:
                raise NotFoundError(f"unknown session {session_id}")
            # Flags reflect live channels only; after a restart nothing is
            # attached, whatever the document said at save time.
            stored = dataclasses.replace(
                stored, robot_connected=False, control_connected=False
            )
            h = self._handles[session_id] = SessionHandle(session=stored)
        return h

    def get_session(self, session_id: str) -> CommunicationSession:
        return self.handle(session_id).session

    def active_count(self) -> int:
        count = 0
        for sid in self._store.list_communication_ids():
            try:
                if self.get_session(sid).status == "active":
                    count += 1
            except NotFoundError:
                continue
        return count

    # -- lifecycle -------------------------------------------------------

    async def create_session(self, config: RobotConfig) -> CommunicationSession:
        violations = validate_config(config)
        if violations:
            raise ConfigValidationError(violations)
        session_id = self._generate_id()
        session = CommunicationSession(
            id=session_id,
            created_at=now_ms(),
            config=config,
            config_version=1,
            status="active",
        )
        self._store.save_communication(session)
        self._handles[session_id] = SessionHandle(session=session)
        return session

    def _generate_id(self) -> str:
        # 6 draws total: the first plus 5 retries. Running dry signals a
        # broken RNG, not a full keyspace (78 x 68 x 1000 ids).
        for _ in range(6):
            sid = (
                f"{self._rng.choice(ADJECTIVES)}-{self._rng.choice(NOUNS)}"
                f"-{self._rng.randrange(1000):03d}"
            )
            if sid not in self._handles and self._store.load_communication(sid) is None:
                return sid
        raise IdExhaustionError("could not draw a fresh session id in 6 attempts")

    async def update_config(
        self, session_id: str, patch: dict[str, Any], expected_version: int
    ) -> tuple[RobotConfig, int]:
        async with self._lock(session_id):
            handle = self.handle(session_id)
            session = handle.session
            if session.status != "active":
                raise SessionClosedError(f"session {session_id} is closed")
            if expected_version != session.config_version:
                raise VersionConflictError(expected_version, session.config_version)
            merged = merge_config(session.config, patch)
            violations = validate_config(merged)
            if violations:
                raise ConfigValidationError(violations)
            updated = dataclasses.replace(
                session, config=merged, config_version=session.config_version + 1
            )
            self._store.save_communication(updated)
            handle.session = updated
            self.broadcast(
                handle,
                "config_update",
                {"config": merged.to_dict(), "config_version": updated.config_version},
            )
            return merged, updated.config_version

    async def attach(self, session_id: str, channel: str, conn: Channel) -> SessionHandle:
        async with self._lock(session_id):
            handle = self.handle(session_id)
            if handle.session.status != "active":
                raise SessionClosedError(f"session {session_id} is closed")
            if channel == "robot":
                if handle.robot_channel is not None:
                    raise RobotAlreadyConnectedError(
                        f"session {session_id} already has a robot channel"
                    )
                handle.robot_channel = conn
            elif channel == "control":
                if conn not in handle.control_channels:
                    handle.control_channels.append(conn)
            else:
                raise ValueError(f"unknown channel kind {channel!r}")
            self._refresh_flags(handle)
            return handle

    async def detach(self, session_id: str, channel: str, conn: Channel) -> None:
        async with self._lock(session_id):
            try:
                handle = self.handle(session_id)
            except NotFoundError:
                return
            if channel == "robot" and handle.robot_channel is conn:
                handle.robot_channel = None
            elif channel == "control" and conn in handle.control_channels:
                handle.control_channels.remove(conn)
            self._refresh_flags(handle)

    def _refresh_flags(self, handle: SessionHandle) -> None:
        handle.session = dataclasses.replace(
            handle.session,
            robot_connected=handle.robot_channel is not None,
            control_connected=bool(handle.control_channels),
        )

    async def close_session(self, session_id: str, reason: str) -> CommunicationSession:
        async with self._lock(session_id):
            handle = self.handle(session_id)
            if handle.session.status == "closed":
                return handle.session  # idempotent, no second broadcast
            handle.session = dataclasses.replace(handle.session, status="closed")
            self._store.save_communication(handle.session)
            self.broadcast(handle, "session_closed", {"reason": reason})
            return handle.session

    async def close_all(self, reason: str) -> list[str]:
        closed = []
        for sid in list(self._handles):
            if self._handles[sid].session.status == "active":
                await self.close_session(sid, reason)
                closed.append(sid)
        return closed

    # -- fan-out -----------------------------------------------------------

    def broadcast(self, handle: SessionHandle, env_type: str, payload: dict[str, Any]) -> None:
        for ch in handle.all_channels():
            ch.enqueue(env_type, dict(payload))
