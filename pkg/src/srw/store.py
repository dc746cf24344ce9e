"""File-backed store for the two collections: session documents and
per-session append-only chat logs.

Layout: ``{data_dir}/communications/{id}.rec`` holds one canonical JSON
document, rewritten atomically on config changes; ``{data_dir}/
chat_messages/{id}.log`` is an append log with one canonical record per
line. Appends are flushed and fsynced before returning, and a torn final
line (crash mid-append) is dropped on reopen so the log always replays as
a clean prefix of the append sequence.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path
from typing import Iterable, Iterator

from .errors import NotFoundError, StoreError
from .model import ChatMessage, CommunicationSession
from .protocol import canonical_dumps, now_ms


class Store:
    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self._comm_dir = self.data_dir / "communications"
        self._chat_dir = self.data_dir / "chat_messages"
        try:
            self._comm_dir.mkdir(parents=True, exist_ok=True)
            self._chat_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreError(f"cannot create data dir {self.data_dir}: {exc}") from exc
        # session id -> (last turn_index, last created_at); lazily rebuilt
        # from the log on first touch after open.
        self._tails: dict[str, tuple[int, int]] = {}

    # -- communications ------------------------------------------------

    def save_communication(self, session: CommunicationSession) -> None:
        """Upsert the session document; durable before return."""
        path = self._comm_dir / f"{session.id}.rec"
        tmp = path.with_suffix(".rec.tmp")
        try:
            data = canonical_dumps(session.to_dict()) + "\n"
            with open(tmp, "w", encoding="utf-8") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
            self._fsync_dir(self._comm_dir)
        except OSError as exc:
            raise StoreError(f"saving communication {session.id}: {exc}") from exc

    def load_communication(self, session_id: str) -> CommunicationSession | None:
        path = self._comm_dir / f"{session_id}.rec"
        if not path.exists():
            return None
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StoreError(f"loading communication {session_id}: {exc}") from exc
        return CommunicationSession.from_dict(json.loads(raw))

    def list_communication_ids(self) -> list[str]:
        return sorted(p.stem for p in self._comm_dir.glob("*.rec"))

    # -- chat messages ---------------------------------------------------

    def append_chat_message(self, message: ChatMessage) -> ChatMessage:
        """Append one message; assigns turn_index = last + 1 (0 for the first).

        created_at is bumped to stay strictly increasing per session so
        created_at order and turn_index order always agree.
        """
        self._require_session(message.session_id)
        last_index, last_created = self._tail(message.session_id)
        stored = dataclasses.replace(
            message,
            turn_index=last_index + 1,
            created_at=max(message.created_at, last_created + 1),
        )
        line = (canonical_dumps(stored.to_record()) + "\n").encode("utf-8")
        path = self._log_path(message.session_id)
        try:
            self._append_bytes(path, line)
        except OSError as exc:
            # Cache is now unreliable; rescan on next touch.
            self._tails.pop(message.session_id, None)
            raise StoreError(f"appending to {path.name}: {exc}") from exc
        self._tails[message.session_id] = (stored.turn_index, stored.created_at)
        return stored

    def fetch_history(self, session_id: str, limit: int | None = None) -> list[ChatMessage]:
        """Messages in turn_index order.

        With a limit, returns the most recent N messages snapped so the
        window starts at a user message (a leading reply without its user
        message is dropped rather than split).
        """
        self._require_session(session_id)
        messages, _ = self._read_log(session_id)
        if limit is None:
            return messages
        window = messages[max(0, len(messages) - limit):]
        while window and window[0].author != "user":
            window.pop(0)
        return window

    def export_transcript(self, session_id: str) -> Iterator[str]:
        """One header line (the session document) then one line per message."""
        session = self.load_communication(session_id)
        if session is None:
            raise NotFoundError(f"unknown session {session_id}")
        yield canonical_dumps(session.to_dict())
        messages, _ = self._read_log(session_id)
        for msg in messages:
            yield canonical_dumps(msg.to_record())

    def import_transcript(self, lines: Iterable[str]) -> str:
        """Inverse of export_transcript; returns the imported session id."""
        it = iter(lines)
        try:
            header = next(it)
        except StopIteration:
            raise StoreError("empty transcript stream") from None
        session = CommunicationSession.from_dict(json.loads(header))
        self.save_communication(session)
        expected = self._tail(session.id)[0] + 1
        for line in it:
            line = line.strip()
            if not line:
                continue
            msg = ChatMessage.from_record(json.loads(line))
            if msg.turn_index != expected:
                raise StoreError(
                    f"transcript gap: expected turn_index {expected}, got {msg.turn_index}"
                )
            raw = (canonical_dumps(msg.to_record()) + "\n").encode("utf-8")
            try:
                self._append_bytes(self._log_path(session.id), raw)
            except OSError as exc:
                raise StoreError(f"importing into {session.id}: {exc}") from exc
            self._tails[session.id] = (msg.turn_index, msg.created_at)
            expected += 1
        return session.id

    # -- internals -------------------------------------------------------

    def _log_path(self, session_id: str) -> Path:
        return self._chat_dir / f"{session_id}.log"

    def _require_session(self, session_id: str) -> None:
        if not (self._comm_dir / f"{session_id}.rec").exists():
            raise NotFoundError(f"unknown session {session_id}")

    def _tail(self, session_id: str) -> tuple[int, int]:
        cached = self._tails.get(session_id)
        if cached is None:
            messages, clean_len = self._read_log(session_id, truncate_torn=True)
            if messages:
                cached = (messages[-1].turn_index, messages[-1].created_at)
            else:
                cached = (-1, 0)
            self._tails[session_id] = cached
        return cached

    def _read_log(
        self, session_id: str, truncate_torn: bool = False
    ) -> tuple[list[ChatMessage], int]:
        """Parse the log; a torn trailing line is ignored (and optionally
        truncated away before the next append)."""
        path = self._log_path(session_id)
        if not path.exists():
            return [], 0
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise StoreError(f"reading {path.name}: {exc}") from exc
        messages: list[ChatMessage] = []
        clean_len = 0
        pos = 0
        while pos < len(blob):
            nl = blob.find(b"\n", pos)
            if nl == -1:
                break  # torn tail: crash mid-append
            line = blob[pos : nl]
            try:
                messages.append(ChatMessage.from_record(json.loads(line.decode("utf-8"))))
            except (ValueError, KeyError):
                if nl == len(blob) - 1:
                    break  # torn tail that happens to end in a newline byte
                raise StoreError(f"corrupt record mid-log in {path.name}") from None
            pos = nl + 1
            clean_len = pos
        if truncate_torn and clean_len < len(blob):
            try:
                with open(path, "r+b") as f:
                    f.truncate(clean_len)
            except OSError as exc:
                raise StoreError(f"truncating torn tail of {path.name}: {exc}") from exc
        return messages, clean_len

    @staticmethod
    def _append_bytes(path: Path, data: bytes) -> None:
        with open(path, "ab") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())

    @staticmethod
    def _fsync_dir(path: Path) -> None:
        try:
            fd = os.open(path, os.O_RDONLY)
        except OSError:
            return  # not supported on this platform/fs; rename is still atomic
        try:
            os.fsync(fd)
        finally:
            os.close(fd)


def fresh_message(
    session_id: str,
    author: str,
    text: str,
    message_id: str,
    **fields,
) -> ChatMessage:
    """Build a message ready for append (store assigns the turn_index)."""
    return ChatMessage(
        id=message_id,
        session_id=session_id,
        turn_index=-1,
        author=author,
        text=text,
        created_at=now_ms(),
        **fields,
    )
