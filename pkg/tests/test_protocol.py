"""Wire protocol: canonical encoding, closed schemas, seq discipline."""

import hashlib
import json
from pathlib import Path

import pytest

import envelope_gen
from srw.errors import (
    ParseError,
    SchemaViolationError,
    UnknownTypeError,
    UnsupportedVersionError,
)
from srw.protocol import (
    ENVELOPE_TYPES,
    MessageEnvelope,
    SeqCounter,
    SeqValidator,
    decode,
    encode,
)

FIXTURES = Path(__file__).parent / "fixtures" / "envelopes.jsonl"


def fixture_frames() -> list[str]:
    return [line for line in FIXTURES.read_text(encoding="utf-8").splitlines() if line.strip()]


def heartbeat_env(**overrides) -> MessageEnvelope:
    fields = dict(
        type="heartbeat",
        session_id="brave-otter-042",
        seq=7,
        ts=1723200000000,
        payload={
            "robot_state": {"phase": "idle", "blinking": False},
            "robot_connected": True,
            "control_connected": True,
            "config_version": 3,
        },
    )
    fields.update(overrides)
    return MessageEnvelope(**fields)


def test_fixture_file_covers_all_types_with_50_envelopes():
    frames = fixture_frames()
    assert len(frames) == 50
    types = {decode(f).type for f in frames}
    assert types == set(ENVELOPE_TYPES)


def test_fixture_roundtrip_identity_and_injectivity():
    frames = fixture_frames()
    hashes = set()
    for frame in frames:
        env = decode(frame)
        canonical = encode(env)
        assert decode(canonical) == env
        assert encode(decode(canonical)) == canonical  # stable fixed point
        hashes.add(hashlib.sha256(canonical.encode()).hexdigest())
    assert len(hashes) == len(frames), "canonical encoding must be injective"


def test_generated_roundtrip_identity_and_injectivity():
    envelopes = envelope_gen.generate(1000)
    hashes = set()
    for env in envelopes:
        frame = encode(env)
        assert decode(frame) == env
        hashes.add(hashlib.sha256(frame.encode()).hexdigest())
    # Duplicate random envelopes are astronomically unlikely; collisions
    # would indicate a lossy encoding.
    assert len(hashes) == len({(e.type, e.session_id, e.seq, e.ts, json.dumps(e.payload, sort_keys=True)) for e in envelopes})


def test_canonical_encoding_is_deterministic_and_sorted():
    env = heartbeat_env()
    first = encode(env)
    second = encode(env)
    assert first == second
    parsed_keys = list(json.loads(first).keys())
    assert parsed_keys == sorted(parsed_keys)
    assert " " not in first.split('"robot_state"')[0]  # no insignificant whitespace


def test_decode_tolerates_key_order_and_whitespace():
    canonical = encode(heartbeat_env())
    obj = json.loads(canonical)
    reversed_frame = json.dumps(dict(reversed(list(obj.items()))), indent=3)
    assert decode(reversed_frame) == decode(canonical)


def test_unknown_payload_field_rejected_on_encode_and_decode():
    env = heartbeat_env()
    env.payload["extra"] = 1
    with pytest.raises(SchemaViolationError) as err:
        encode(env)
    assert "unknown field" in str(err.value)
    frame = json.dumps(
        {"v": 1, "type": "wake_detected", "session_id": "s-a-000", "seq": 0, "ts": 1, "payload": {"x": 1}}
    )
    with pytest.raises(SchemaViolationError):
        decode(frame)


@pytest.mark.parametrize("env_type", ENVELOPE_TYPES)
def test_every_payload_schema_is_closed(env_type):
    rng_env = next(e for e in envelope_gen.generate(500) if e.type == env_type)
    ok_frame = encode(rng_env)
    poisoned = dict(rng_env.payload)
    poisoned["__extra__"] = True
    bad = MessageEnvelope(
        type=env_type, session_id=rng_env.session_id, seq=rng_env.seq, ts=rng_env.ts, payload=poisoned
    )
    with pytest.raises(SchemaViolationError):
        encode(bad)
    raw = json.loads(ok_frame)
    raw["payload"]["__extra__"] = True
    with pytest.raises(SchemaViolationError):
        decode(json.dumps(raw))


def test_unsupported_version_is_a_distinct_error():
    frame = json.dumps({"v": 2, "type": "user_text", "session_id": "x-y-000", "seq": 0, "ts": 0, "payload": {"text": "hi"}})
    with pytest.raises(UnsupportedVersionError):
        decode(frame)


def test_unknown_type_is_a_distinct_error():
    frame = json.dumps({"v": 1, "type": "telemetry", "session_id": "x-y-000", "seq": 0, "ts": 0, "payload": {}})
    with pytest.raises(UnknownTypeError):
        decode(frame)


def test_malformed_frames_are_parse_errors():
    with pytest.raises(ParseError):
        decode("{not json")
    with pytest.raises(ParseError):
        decode("42")


def test_missing_envelope_fields_are_schema_violations():
    with pytest.raises(SchemaViolationError):
        decode(json.dumps({"v": 1, "type": "user_text", "session_id": "x-y-000", "seq": 0, "payload": {"text": "a"}}))
    with pytest.raises(SchemaViolationError):
        decode(json.dumps({"type": "user_text", "session_id": "x-y-000", "seq": 0, "ts": 0, "payload": {"text": "a"}}))


def test_envelope_rejects_unknown_top_level_key():
    with pytest.raises(SchemaViolationError):
        decode(json.dumps({"v": 1, "type": "wake_detected", "session_id": "a-b-000", "seq": 0, "ts": 0, "payload": {}, "route": "x"}))


def test_schema_errors_name_the_offending_field():
    env = heartbeat_env(payload={**heartbeat_env().payload, "config_version": 0})
    with pytest.raises(SchemaViolationError) as err:
        encode(env)
    assert "config_version" in err.value.field


def test_bool_is_not_an_int_for_schema_purposes():
    env = heartbeat_env(payload={**heartbeat_env().payload, "config_version": True})
    with pytest.raises(SchemaViolationError):
        encode(env)


def test_seq_counter_starts_at_zero_and_counts_sends():
    counter = SeqCounter()
    assert counter.next() == 0
    for _ in range(9):
        counter.next()
    assert counter.next() == 10  # the 11th envelope carries seq 10


def test_seq_validator_flags_gap_at_third_frame_and_resyncs():
    v = SeqValidator()
    assert v.check(0) is True
    assert v.check(1) is True
    assert v.check(3) is False  # the gap is reported exactly here
    assert v.check(4) is True  # resynchronized, stream continues


def test_seq_validator_flags_repeat():
    v = SeqValidator()
    assert v.check(0) is True
    assert v.check(0) is False
    assert v.check(1) is True


def test_timestamps_are_integers_on_the_wire():
    frame = encode(heartbeat_env(ts=1723200000123))
    assert json.loads(frame)["ts"] == 1723200000123
    with pytest.raises(SchemaViolationError):
        encode(heartbeat_env(ts=1.5))
