"""Durable store: upserts, gapless append logs, pair-snapped history,
transcript export/import, and crash recovery."""

import json
import random

import pytest

from srw.errors import NotFoundError, StoreError
from srw.model import CommunicationSession, default_config
from srw.store import Store, fresh_message


def make_session(session_id="brave-otter-042") -> CommunicationSession:
    return CommunicationSession(id=session_id, created_at=1723200000000, config=default_config())


def seeded_store(tmp_path, session_id="brave-otter-042") -> Store:
    store = Store(tmp_path / "data")
    store.save_communication(make_session(session_id))
    return store


def append_turns(store: Store, session_id: str, n_turns: int) -> None:
    for k in range(n_turns):
        user = store.append_chat_message(
            fresh_message(session_id, "user", f"question {k}", f"u{k}", modality="text")
        )
        store.append_chat_message(
            fresh_message(
                session_id,
                "robot",
                f"answer {k}",
                f"r{k}",
                in_reply_to=user.id,
                llm_model_used="echo",
                config_version_used=1,
                latency_ms={"llm": 1, "tts": 1},
            )
        )


# -- communications -----------------------------------------------------------


def test_save_then_load_roundtrip(tmp_path):
    store = Store(tmp_path / "data")
    session = make_session()
    store.save_communication(session)
    assert store.load_communication(session.id) == session


def test_upsert_keeps_only_latest(tmp_path):
    import dataclasses

    store = Store(tmp_path / "data")
    v1 = make_session()
    store.save_communication(v1)
    v2 = dataclasses.replace(v1, config_version=2)
    store.save_communication(v2)
    assert store.load_communication(v1.id) == v2


def test_reopen_after_process_restart_still_loads(tmp_path):
    store = Store(tmp_path / "data")
    session = make_session()
    store.save_communication(session)
    del store
    reopened = Store(tmp_path / "data")
    assert reopened.load_communication(session.id) == session


# -- chat messages -------------------------------------------------------------


def test_first_message_gets_turn_index_zero(tmp_path):
    store = seeded_store(tmp_path)
    stored = store.append_chat_message(
        fresh_message("brave-otter-042", "user", "hi", "u0", modality="text")
    )
    assert stored.turn_index == 0


def test_bulk_append_indexes_are_gapless(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 500)
    history = store.fetch_history("brave-otter-042")
    assert [m.turn_index for m in history] == list(range(1000))


def test_created_at_order_equals_turn_index_order(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 50)
    history = store.fetch_history("brave-otter-042")
    by_created = sorted(history, key=lambda m: m.created_at)
    assert [m.id for m in by_created] == [m.id for m in history]
    assert len({m.created_at for m in history}) == len(history)


def test_append_to_unknown_session_is_not_found(tmp_path):
    store = Store(tmp_path / "data")
    with pytest.raises(NotFoundError):
        store.append_chat_message(fresh_message("no-such-000", "user", "x", "u0", modality="text"))


def test_append_to_closed_session_is_allowed(tmp_path):
    # Closure is a routing concern; the log stays writable.
    import dataclasses

    store = Store(tmp_path / "data")
    store.save_communication(dataclasses.replace(make_session(), status="closed"))
    stored = store.append_chat_message(
        fresh_message("brave-otter-042", "user", "late", "u0", modality="text")
    )
    assert stored.turn_index == 0


def test_fetch_survives_reopen(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 3)
    reopened = Store(tmp_path / "data")
    assert [m.text for m in reopened.fetch_history("brave-otter-042")] == [
        "question 0", "answer 0", "question 1", "answer 1", "question 2", "answer 2",
    ]


def test_fetch_matches_replay_oracle_on_random_sessions(tmp_path):
    rng = random.Random(7)
    store = Store(tmp_path / "data")
    for s in range(100):
        sid = f"sess-oracle-{s:03d}"
        store.save_communication(make_session(sid))
        expected: list[str] = []  # in-memory replay of the append sequence
        for k in range(rng.randrange(0, 12)):
            author = "user" if k % 2 == 0 else "robot"
            text = f"{author}-{k}-{rng.randrange(1000)}"
            if author == "user":
                store.append_chat_message(fresh_message(sid, author, text, f"m{k}", modality="text"))
            else:
                store.append_chat_message(fresh_message(sid, author, text, f"m{k}", in_reply_to=f"m{k-1}"))
            expected.append(text)
        assert [m.text for m in store.fetch_history(sid)] == expected


# -- limit with pair-boundary snap ---------------------------------------------


def test_limit_snaps_to_user_message_boundary(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 2)  # u0 r1 u2 r3
    window = store.fetch_history("brave-otter-042", limit=3)
    assert [m.author for m in window] == ["user", "robot"]
    assert [m.turn_index for m in window] == [2, 3]


def test_limit_larger_than_log_returns_everything(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 2)
    assert len(store.fetch_history("brave-otter-042", limit=50)) == 4


def test_no_limit_returns_full_log(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 4)
    assert len(store.fetch_history("brave-otter-042")) == 8


# -- transcript export / import -------------------------------------------------


def test_export_line_count_is_header_plus_messages(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 2)
    lines = list(store.export_transcript("brave-otter-042"))
    assert len(lines) == 5
    header = json.loads(lines[0])
    assert header["id"] == "brave-otter-042"


def test_empty_session_exports_exactly_one_header_line(tmp_path):
    store = seeded_store(tmp_path)
    assert len(list(store.export_transcript("brave-otter-042"))) == 1


def test_export_is_deterministic(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 3)
    first = "\n".join(store.export_transcript("brave-otter-042"))
    second = "\n".join(store.export_transcript("brave-otter-042"))
    assert first == second


def test_export_import_roundtrip_into_fresh_store(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 4)
    lines = list(store.export_transcript("brave-otter-042"))

    fresh = Store(tmp_path / "other")
    imported_id = fresh.import_transcript(lines)
    assert imported_id == "brave-otter-042"
    assert fresh.fetch_history(imported_id) == store.fetch_history("brave-otter-042")
    assert list(fresh.export_transcript(imported_id)) == lines


def test_export_unknown_session_not_found(tmp_path):
    store = Store(tmp_path / "data")
    with pytest.raises(NotFoundError):
        list(store.export_transcript("ghost-wren-000"))


# -- crash safety -----------------------------------------------------------------


def test_torn_tail_is_dropped_and_log_recovers_a_clean_prefix(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 3)
    log_path = tmp_path / "data" / "chat_messages" / "brave-otter-042.log"
    blob = log_path.read_bytes()
    # Simulate a crash mid-append: the final record is half-written.
    log_path.write_bytes(blob[: len(blob) - 17])

    reopened = Store(tmp_path / "data")
    history = reopened.fetch_history("brave-otter-042")
    assert [m.turn_index for m in history] == list(range(5))  # clean prefix

    appended = reopened.append_chat_message(
        fresh_message("brave-otter-042", "user", "after crash", "u9", modality="text")
    )
    assert appended.turn_index == 5
    # The torn bytes were truncated away; the log parses fully again.
    final = Store(tmp_path / "data").fetch_history("brave-otter-042")
    assert [m.turn_index for m in final] == list(range(6))
    assert final[-1].text == "after crash"


def test_torn_writes_at_every_offset_recover_a_prefix(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 2)
    log_path = tmp_path / "data" / "chat_messages" / "brave-otter-042.log"
    blob = log_path.read_bytes()
    newline_offsets = [i + 1 for i, b in enumerate(blob) if b == 0x0A]
    for cut in range(1, len(blob)):
        log_path.write_bytes(blob[:cut])
        recovered = Store(tmp_path / "data").fetch_history("brave-otter-042")
        complete = len([o for o in newline_offsets if o <= cut])
        assert [m.turn_index for m in recovered] == list(range(complete)), f"cut at {cut}"
    log_path.write_bytes(blob)


def test_failed_append_surfaces_store_error_and_recovers(tmp_path, monkeypatch):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 1)
    real_append = Store._append_bytes

    def torn_append(path, data):
        with open(path, "ab") as f:
            f.write(data[: len(data) // 2])  # injected partial write
        raise OSError("injected I/O failure")

    monkeypatch.setattr(Store, "_append_bytes", staticmethod(torn_append))
    with pytest.raises(StoreError):
        store.append_chat_message(
            fresh_message("brave-otter-042", "user", "doomed", "u5", modality="text")
        )
    monkeypatch.setattr(Store, "_append_bytes", staticmethod(real_append))
    # Reopen: the half-record is invisible; appends continue gaplessly.
    recovered = Store(tmp_path / "data")
    assert [m.turn_index for m in recovered.fetch_history("brave-otter-042")] == [0, 1]
    appended = recovered.append_chat_message(
        fresh_message("brave-otter-042", "user", "fine", "u6", modality="text")
    )
    assert appended.turn_index == 2


def test_mid_log_corruption_is_reported_not_masked(tmp_path):
    store = seeded_store(tmp_path)
    append_turns(store, "brave-otter-042", 2)
    log_path = tmp_path / "data" / "chat_messages" / "brave-otter-042.log"
    lines = log_path.read_bytes().splitlines(keepends=True)
    lines[1] = b'{"broken": true}\n'
    log_path.write_bytes(b"".join(lines))
    with pytest.raises(StoreError):
        Store(tmp_path / "data").fetch_history("brave-otter-042")
