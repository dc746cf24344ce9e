"""Scripted-session driver and load harness.

This is the executable test surface for the gateway: it creates sessions
over REST, attaches both WebSocket channels, replays a declarative
scenario (or a synthetic load), records every envelope with receive
timestamps, and evaluates expectations post-hoc.

Scenario files are line-oriented canonical JSON: a header record
{"name", "config"} followed by one step per line
{"at_ms", "action", "args"} with actions text, voice_fixture, wake, wait,
expect_reply, expect_state, update_config.

Exit codes: 0 all expectations pass, 1 expectation/ordering failure,
3 server unreachable.
"""

from __future__ import annotations

import argparse
import asyncio
import base64
import json
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import httpx
import websockets

from . import audio, protocol
from .protocol import MessageEnvelope, SeqCounter, SeqValidator, encode, now_ms

DEFAULT_STATE_TOL_MS = 100
DEFAULT_HEARTBEAT_TOL_MS = 500
REPLY_WAIT_MS = 15000

ACTIONS = ("text", "voice_fixture", "wake", "wait", "expect_reply", "expect_state", "update_config")


class SimConnectionError(Exception):
    pass


@dataclass(frozen=True)
class Step:
    at_ms: int
    action: str
    args: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    config: dict[str, Any]
    steps: list[Step]


def parse_scenario(lines: list[str]) -> Scenario:
    records = [json.loads(line) for line in lines if line.strip()]
    if not records:
        raise ValueError("scenario file is empty")
    header = records[0]
    steps: list[Step] = []
    last_at = 0
    for i, raw in enumerate(records[1:]):
        action = raw.get("action")
        if action not in ACTIONS:
            raise ValueError(f"step {i}: unknown action {action!r}")
        at_ms = int(raw.get("at_ms", last_at))
        if at_ms < last_at:
            raise ValueError(f"step {i}: at_ms {at_ms} decreases (previous {last_at})")
        last_at = at_ms
        steps.append(Step(at_ms=at_ms, action=action, args=raw.get("args", {})))
    for i, step in enumerate(steps):
        ref = step.args.get("ref")
        if ref is not None and not (0 <= int(ref) < i):
            raise ValueError(f"step {i}: ref {ref} does not point at a prior step")
    return Scenario(name=header.get("name", "unnamed"), config=header.get("config", {}), steps=steps)


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class Recorded:
    channel: str
    env: MessageEnvelope
    t_ms: float  # relative to scenario start


def synth_fixture_clip(transcript: str | None, duration_ms: int = 400) -> dict[str, Any]:
    """A small valid WAV carrying the ground-truth transcript (or none)."""
    samples = audio.sine_samples(250.0, duration_ms, 16000)
    wav = audio.build_wav(samples, 16000, transcript=transcript)
    return audio.clip_from_wav(wav).to_dict()


class SessionClient:
    """One simulated robot screen + control panel over real sockets."""

    def __init__(self, server_url: str, config: dict[str, Any], auto_playback: bool = True):
        self.server_url = server_url.rstrip("/")
        self.config = config
        self.auto_playback = auto_playback
        self.session_id: str | None = None
        self.known_version = 1
        self.records: list[Recorded] = []
        self.input_send_ms: list[float] = []  # one entry per input action
        self.reply_latency_ms: list[float] = []
        self.seq_violations = 0
        self.bad_frames = 0
        self._t0 = 0.0
        self._http: httpx.AsyncClient | None = None
        self._robot_ws = None
        self._control_ws = None
        self._robot_seq = SeqCounter()
        self._control_seq = SeqCounter()
        self._validators = {"robot": SeqValidator(), "control": SeqValidator()}
        self._readers: list[asyncio.Task] = []
        self._reply_count = 0
        self._reply_cond = asyncio.Condition()

    def now_rel_ms(self) -> float:
        return (time.perf_counter() - self._t0) * 1000

    async def start(self) -> None:
        self._t0 = time.perf_counter()
        self._http = httpx.AsyncClient(base_url=self.server_url, timeout=10.0)
        try:
            resp = await self._http.post("/api/sessions", json={"config": self.config})
        except httpx.HTTPError as exc:
            raise SimConnectionError(f"cannot reach server: {exc}") from exc
        if resp.status_code != 201:
            raise SimConnectionError(f"session create failed: {resp.status_code} {resp.text}")
        session = resp.json()["session"]
        self.session_id = session["id"]
        self.known_version = session["config_version"]
        ws_base = re.sub(r"^http", "ws", self.server_url)
        try:
            self._robot_ws = await websockets.connect(
                f"{ws_base}/ws/robot/{self.session_id}", ping_interval=None
            )
            self._control_ws = await websockets.connect(
                f"{ws_base}/ws/control/{self.session_id}", ping_interval=None
            )
        except OSError as exc:
            raise SimConnectionError(f"websocket connect failed: {exc}") from exc
        self._readers = [
            asyncio.create_task(self._read_loop(self._robot_ws, "robot")),
            asyncio.create_task(self._read_loop(self._control_ws, "control")),
        ]

    async def stop(self) -> None:
        for task in self._readers:
            task.cancel()
        for task in self._readers:
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
        for ws in (self._robot_ws, self._control_ws):
            if ws is not None:
                try:
                    await ws.close()
                except Exception:
                    pass
        if self._http is not None:
            await self._http.aclose()

    async def _read_loop(self, ws, channel: str) -> None:
        validator = self._validators[channel]
        async for frame in ws:
            t = self.now_rel_ms()
            try:
                env = protocol.decode(frame if isinstance(frame, str) else frame.decode())
            except Exception:
                self.bad_frames += 1
                continue
            if not validator.check(env.seq):
                self.seq_violations += 1
            self.records.append(Recorded(channel=channel, env=env, t_ms=t))
            if env.type == "config_update":
                self.known_version = env.payload["config_version"]
            if channel == "robot" and env.type == "robot_reply":
                if self._reply_count < len(self.input_send_ms):
                    self.reply_latency_ms.append(t - self.input_send_ms[self._reply_count])
                self._reply_count += 1
                async with self._reply_cond:
                    self._reply_cond.notify_all()
                if self.auto_playback:
                    await self.send_playback_done()

    async def _send(self, ws, counter: SeqCounter, env_type: str, payload: dict[str, Any]) -> None:
        env = MessageEnvelope(
            type=env_type,
            session_id=self.session_id or "",
            seq=counter.next(),
            ts=now_ms(),
            payload=payload,
        )
        await ws.send(encode(env))

    async def send_user_text(self, text: str) -> None:
        self.input_send_ms.append(self.now_rel_ms())
        await self._send(self._robot_ws, self._robot_seq, "user_text", {"text": text})

    async def send_user_audio(self, clip: dict[str, Any], modality: str) -> None:
        self.input_send_ms.append(self.now_rel_ms())
        await self._send(
            self._robot_ws, self._robot_seq, "user_audio", {"audio": clip, "modality": modality}
        )

    async def send_wake(self) -> None:
        await self._send(self._robot_ws, self._robot_seq, "wake_detected", {})

    async def send_playback_done(self, blinking: bool = False) -> None:
        await self._send(
            self._robot_ws, self._robot_seq, "state_update", {"phase": "idle", "blinking": blinking}
        )

    async def update_config(self, patch: dict[str, Any]) -> dict[str, Any]:
        resp = await self._http.patch(
            f"/api/sessions/{self.session_id}/config",
            json={"patch": patch, "expected_version": self.known_version},
        )
        body = resp.json()
        if resp.status_code == 200:
            self.known_version = body["config_version"]
        return {"status": resp.status_code, "body": body}

    async def wait_for_reply(self, ordinal: int, timeout_ms: float = REPLY_WAIT_MS) -> bool:
        """Block until the (ordinal+1)-th robot_reply arrived."""
        deadline = time.perf_counter() + timeout_ms / 1000
        async with self._reply_cond:
            while self._reply_count <= ordinal:
                remaining = deadline - time.perf_counter()
                if remaining <= 0:
                    return False
                try:
                    await asyncio.wait_for(self._reply_cond.wait(), timeout=remaining)
                except asyncio.TimeoutError:
                    return False
        return True

    # -- derived views ----------------------------------------------------

    def replies(self) -> list[Recorded]:
        return [r for r in self.records if r.channel == "robot" and r.env.type == "robot_reply"]

    def state_updates(self) -> list[Recorded]:
        return [r for r in self.records if r.channel == "robot" and r.env.type == "state_update"]

    def heartbeats(self) -> list[Recorded]:
        return [r for r in self.records if r.channel == "control" and r.env.type == "heartbeat"]

    def heartbeat_gaps_ms(self) -> list[float]:
        beats = [r.t_ms for r in self.heartbeats()]
        return [b - a for a, b in zip(beats, beats[1:])]

    def state_sequence(self) -> list[str]:
        return [r.env.payload["phase"] for r in self.state_updates()]

    async def fetch_transcript_lines(self) -> list[str]:
        resp = await self._http.get(f"/api/sessions/{self.session_id}/transcript")
        resp.raise_for_status()
        return [line for line in resp.text.splitlines() if line.strip()]


def _percentiles(values: list[float]) -> dict[str, float]:
    if not values:
        return {"count": 0, "p50": 0.0, "p95": 0.0, "p99": 0.0, "max": 0.0}
    ordered = sorted(values)

    def pct(q: float) -> float:
        idx = min(len(ordered) - 1, max(0, round(q / 100 * (len(ordered) - 1))))
        return round(ordered[idx], 3)

    return {
        "count": len(ordered),
        "p50": pct(50),
        "p95": pct(95),
        "p99": pct(99),
        "max": round(ordered[-1], 3),
    }


async def run_scenario(server_url: str, scenario: Scenario) -> dict[str, Any]:
    """Replay one scenario; returns the machine-readable report."""
    client = SessionClient(server_url, scenario.config)
    await client.start()
    send_ms_by_step: dict[int, float] = {}
    input_ordinal_by_step: dict[int, int] = {}
    inputs_so_far = 0
    expectations: list[dict[str, Any]] = []

    try:
        start = time.perf_counter()
        for i, step in enumerate(scenario.steps):
            delay = start + step.at_ms / 1000 - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            send_ms_by_step[i] = client.now_rel_ms()
            if step.action == "text":
                input_ordinal_by_step[i] = inputs_so_far
                inputs_so_far += 1
                await client.send_user_text(step.args["text"])
            elif step.action == "voice_fixture":
                input_ordinal_by_step[i] = inputs_so_far
                inputs_so_far += 1
                if "wav_path" in step.args:
                    wav = Path(step.args["wav_path"]).read_bytes()
                    clip = audio.clip_from_wav(wav).to_dict()
                else:
                    clip = synth_fixture_clip(step.args.get("transcript"))
                await client.send_user_audio(clip, step.args.get("modality", "voice_button"))
            elif step.action == "wake":
                await client.send_wake()
            elif step.action == "wait":
                await asyncio.sleep(step.args.get("ms", 0) / 1000)
            elif step.action == "update_config":
                result = await client.update_config(step.args["patch"])
                send_ms_by_step[i] = client.now_rel_ms()
                if result["status"] != 200:
                    expectations.append(
                        {
                            "step": i,
                            "action": step.action,
                            "ok": False,
                            "detail": f"config update failed: {result}",
                        }
                    )
            elif step.action == "expect_reply":
                ref = step.args.get("ref")
                ordinal = (
                    input_ordinal_by_step[int(ref)]
                    if ref is not None
                    else inputs_so_far - 1
                )
                ok = await client.wait_for_reply(ordinal, step.args.get("wait_ms", REPLY_WAIT_MS))
                if not ok:
                    expectations.append(
                        {"step": i, "action": step.action, "ok": False, "detail": "reply never arrived"}
                    )
        await asyncio.sleep(0.25)  # collect trailing envelopes
    finally:
        await client.stop()

    # Post-hoc evaluation over the recorded timeline.
    replies = client.replies()
    for i, step in enumerate(scenario.steps):
        if step.action == "expect_reply":
            ref = step.args.get("ref")
            if ref is not None:
                ordinal = input_ordinal_by_step.get(int(ref))
            else:
                prior = [j for j in input_ordinal_by_step if j < i]
                ordinal = input_ordinal_by_step[max(prior)] if prior else None
            if ordinal is None or ordinal >= len(replies):
                if not any(e["step"] == i for e in expectations):
                    expectations.append(
                        {"step": i, "action": step.action, "ok": False, "detail": "no matching reply"}
                    )
                continue
            rec = replies[ordinal]
            ok, detail = _check_reply(rec, step.args)
            expectations.append({"step": i, "action": step.action, "ok": ok, "detail": detail})
        elif step.action == "expect_state":
            ok, detail = _check_state(client, step.args, send_ms_by_step, i)
            expectations.append({"step": i, "action": step.action, "ok": ok, "detail": detail})

    passed = all(e["ok"] for e in expectations) and client.seq_violations == 0 and client.bad_frames == 0
    return {
        "scenario": scenario.name,
        "session_id": client.session_id,
        "pass": passed,
        "expectations": expectations,
        "latency_ms": _percentiles(client.reply_latency_ms),
        "turn_latencies_ms": [round(v, 3) for v in client.reply_latency_ms],
        "heartbeats": {
            "count": len(client.heartbeats()),
            "gaps_ms": [round(g, 3) for g in client.heartbeat_gaps_ms()],
        },
        "state_updates": [
            {"phase": r.env.payload["phase"], "t_ms": round(r.t_ms, 3)} for r in client.state_updates()
        ],
        "errors_received": [
            {"code": r.env.payload["code"], "t_ms": round(r.t_ms, 3)}
            for r in client.records
            if r.env.type == "error"
        ],
        "seq_violations": client.seq_violations,
        "bad_frames": client.bad_frames,
    }


def _check_reply(rec: Recorded, args: dict[str, Any]) -> tuple[bool, str]:
    payload = rec.env.payload
    problems = []
    pattern = args.get("match")
    if pattern is not None and not re.search(pattern, payload["text"]):
        problems.append(f"text {payload['text']!r} does not match {pattern!r}")
    if "has_audio" in args and bool(payload.get("audio")) != bool(args["has_audio"]):
        problems.append(f"audio presence is {bool(payload.get('audio'))}, expected {args['has_audio']}")
    if "degraded" in args and bool(payload.get("degraded")) != bool(args["degraded"]):
        problems.append(f"degraded flag is {bool(payload.get('degraded'))}, expected {args['degraded']}")
    if "audio_peak_hz" in args:
        clip = payload.get("audio")
        if clip is None:
            problems.append("expected audio to analyze, reply carries none")
        else:
            wav = base64.b64decode(clip["payload_b64"])
            peak = audio.dominant_frequency_hz(wav)
            tol = args.get("peak_tol_hz", 5.0)
            if abs(peak - args["audio_peak_hz"]) > tol:
                problems.append(f"dominant frequency {peak:.1f} Hz not within {tol} of {args['audio_peak_hz']}")
    if problems:
        return False, "; ".join(problems)
    return True, f"reply ok: {payload['text'][:60]!r}"


def _check_state(
    client: SessionClient, args: dict[str, Any], send_ms_by_step: dict[int, float], step_index: int
) -> tuple[bool, str]:
    phase = args["phase"]
    ref = args.get("ref")
    if ref is not None:
        ref_ms = send_ms_by_step.get(int(ref))
        if ref_ms is None:
            return False, f"ref step {ref} never executed"
    else:
        ref_ms = 0.0
    matches = [r for r in client.state_updates() if r.env.payload["phase"] == phase and r.t_ms > ref_ms]
    if not matches:
        return False, f"no state_update({phase}) observed after t={ref_ms:.0f} ms"
    observed = matches[0].t_ms - ref_ms
    if "offset_ms" in args:
        tol = args.get("tol_ms", DEFAULT_STATE_TOL_MS)
        if abs(observed - args["offset_ms"]) > tol:
            return False, f"state {phase} at +{observed:.0f} ms, expected {args['offset_ms']}±{tol}"
    return True, f"state {phase} observed at +{observed:.0f} ms"


async def run_load(
    server_url: str,
    sessions: int,
    turns: int,
    observe_extra_s: float = 0.0,
) -> dict[str, Any]:
    """N concurrent scripted sessions x K text turns against mock providers."""
    clients = [
        SessionClient(server_url, {"modes": {"text_enabled": True}}) for _ in range(sessions)
    ]

    async def drive(idx: int, client: SessionClient) -> dict[str, Any]:
        await client.start()
        ok = True
        detail = ""
        for k in range(turns):
            await client.send_user_text(f"hello {idx}-{k}")
            if not await client.wait_for_reply(k):
                ok = False
                detail = f"turn {k} reply timed out"
                break
        if observe_extra_s:
            await asyncio.sleep(observe_extra_s)
        await asyncio.sleep(0.25)
        lines = await client.fetch_transcript_lines()
        messages = [json.loads(line) for line in lines[1:]]
        indexes = [m["turn_index"] for m in messages]
        persistence_ok = (
            len(messages) == 2 * turns
            and indexes == list(range(2 * turns))
            and all(m["author"] == ("user" if i % 2 == 0 else "robot") for i, m in enumerate(messages))
        )
        expected_states = ["idle"] + ["listening", "thinking", "speaking", "idle"] * turns
        trajectory_ok = client.state_sequence() == expected_states
        report = {
            "session_id": client.session_id,
            "ok": ok and persistence_ok and trajectory_ok and client.seq_violations == 0,
            "detail": detail,
            "persistence_ok": persistence_ok,
            "message_count": len(messages),
            "trajectory_ok": trajectory_ok,
            "seq_violations": client.seq_violations,
            "latencies_ms": [round(v, 3) for v in client.reply_latency_ms],
            "heartbeat_gaps_ms": [round(g, 3) for g in client.heartbeat_gaps_ms()],
        }
        await client.stop()
        return report

    per_session = await asyncio.gather(*(drive(i, c) for i, c in enumerate(clients)))
    all_latencies = [v for r in per_session for v in r["latencies_ms"]]
    all_gaps = [g for r in per_session for g in r["heartbeat_gaps_ms"]]
    gaps_in_band = [g for g in all_gaps if abs(g - 5000) <= DEFAULT_HEARTBEAT_TOL_MS]
    return {
        "sessions": sessions,
        "turns_per_session": turns,
        "pass": all(r["ok"] for r in per_session),
        "latency_ms": _percentiles(all_latencies),
        "seq_violations": sum(r["seq_violations"] for r in per_session),
        "persistence_ok": all(r["persistence_ok"] for r in per_session),
        "trajectory_ok": all(r["trajectory_ok"] for r in per_session),
        "heartbeats": {
            "gaps_ms": [round(g, 3) for g in all_gaps],
            "in_band_fraction": (len(gaps_in_band) / len(all_gaps)) if all_gaps else None,
        },
        "per_session": per_session,
    }


def _print_scenario_summary(report: dict[str, Any]) -> None:
    print(f"scenario {report['scenario']!r} session={report['session_id']}")
    for e in report["expectations"]:
        mark = "ok  " if e["ok"] else "FAIL"
        print(f"  {mark} step {e['step']:>2} {e['action']:<13} {e['detail']}")
    lat = report["latency_ms"]
    if lat["count"]:
        print(f"  turns: {lat['count']}  p50={lat['p50']} ms  p95={lat['p95']} ms  p99={lat['p99']} ms")
    if report["seq_violations"] or report["bad_frames"]:
        print(f"  FAIL protocol: seq_violations={report['seq_violations']} bad_frames={report['bad_frames']}")
    print("  PASS" if report["pass"] else "  FAIL")


def _print_load_summary(report: dict[str, Any]) -> None:
    lat = report["latency_ms"]
    print(
        f"load: {report['sessions']} sessions x {report['turns_per_session']} turns  "
        f"p50={lat['p50']} ms p95={lat['p95']} ms p99={lat['p99']} ms"
    )
    print(
        f"  seq_violations={report['seq_violations']} persistence_ok={report['persistence_ok']} "
        f"trajectory_ok={report['trajectory_ok']}"
    )
    frac = report["heartbeats"]["in_band_fraction"]
    if frac is not None:
        print(f"  heartbeat gaps in 5000±{DEFAULT_HEARTBEAT_TOL_MS} ms band: {frac:.3f}")
    print("  PASS" if report["pass"] else "  FAIL")


def _write_report(report: dict[str, Any], path: str | None) -> None:
    if path:
        Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="srw-sim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="replay a scenario file")
    p_run.add_argument("scenario", help="path to a scenario file")
    p_run.add_argument("--server", required=True)
    p_run.add_argument("--report", help="write the machine-readable report here")

    p_load = sub.add_parser("load", help="concurrent scripted sessions")
    p_load.add_argument("--server", required=True)
    p_load.add_argument("--sessions", type=int, default=20)
    p_load.add_argument("--turns", type=int, default=10)
    p_load.add_argument("--observe-seconds", type=float, default=0.0)
    p_load.add_argument("--report", help="write the machine-readable report here")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            scenario = load_scenario(args.scenario)
            report = asyncio.run(run_scenario(args.server, scenario))
            _write_report(report, args.report)
            _print_scenario_summary(report)
        else:
            report = asyncio.run(
                run_load(args.server, args.sessions, args.turns, args.observe_seconds)
            )
            _write_report(report, args.report)
            _print_load_summary(report)
    except SimConnectionError as exc:
        print(f"connection failure: {exc}", file=sys.stderr)
        sys.exit(3)
    sys.exit(0 if report["pass"] else 1)


if __name__ == "__main__":
    main()
