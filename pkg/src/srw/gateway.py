"""The network face: REST session management, the two WebSocket channels,
heartbeat scheduling, and envelope-level authorization.

Channel authorization matrix (what each side may send):
  robot   -> user_text, user_audio, wake_detected, state_update (playback done)
  control -> config_update, session_closed
Everything else is answered with a typed error envelope; no inbound frame
is ever dropped silently and no single bad frame kills a connection.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import signal
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import uvicorn
from fastapi import FastAPI, WebSocket
from fastapi.responses import JSONResponse, PlainTextResponse
from starlette.websockets import WebSocketDisconnect, WebSocketState

from . import protocol
from .errors import (
    ConfigValidationError,
    NotFoundError,
    ProtocolError,
    SessionClosedError,
    SrwError,
    VersionConflictError,
)
from .model import AudioClip, default_config
from .pipeline import SessionRuntime, TurnRequest
from .protocol import MessageEnvelope, SeqCounter, SeqValidator, encode, now_ms
from .providers import build_providers
from .registry import SessionRegistry, merge_config
from .store import Store

log = logging.getLogger(__name__)

OUTBOUND_QUEUE_LIMIT = 256

ROBOT_SEND_TYPES = {"user_text", "user_audio", "wake_detected", "state_update"}
CONTROL_SEND_TYPES = {"config_update", "session_closed"}


class GatewayConfigError(Exception):
    pass


@dataclass
class GatewayConfig:
    bind_host: str = "127.0.0.1"
    bind_port: int = 8000
    llm_base_url: str = "http://127.0.0.1:11434"
    provider_mode: str = "mock"
    data_dir: str = "./data"
    heartbeat_ms: int = 5000
    history_turns: int = 20

    def validate(self) -> None:
        if self.provider_mode not in ("mock", "live"):
            raise GatewayConfigError(f"provider_mode must be mock or live, got {self.provider_mode!r}")
        if self.heartbeat_ms < 1000:
            raise GatewayConfigError("heartbeat_ms must be >= 1000")
        if self.history_turns < 1:
            raise GatewayConfigError("history_turns must be >= 1")
        if not (0 < self.bind_port < 65536):
            raise GatewayConfigError(f"invalid port {self.bind_port}")


def config_from_env(env: dict[str, str] | None = None) -> GatewayConfig:
    env = dict(os.environ if env is None else env)
    cfg = GatewayConfig()
    addr = env.get("SRW_BIND_ADDR")
    if addr:
        host, sep, port = addr.rpartition(":")
        if not sep:
            raise GatewayConfigError(f"SRW_BIND_ADDR must be host:port, got {addr!r}")
        try:
            cfg.bind_host, cfg.bind_port = host, int(port)
        except ValueError:
            raise GatewayConfigError(f"SRW_BIND_ADDR port is not an integer: {addr!r}") from None
    cfg.llm_base_url = env.get("SRW_LLM_BASE_URL", cfg.llm_base_url)
    cfg.provider_mode = env.get("SRW_PROVIDER_MODE", cfg.provider_mode)
    cfg.data_dir = env.get("SRW_DATA_DIR", cfg.data_dir)
    for key, attr in (("SRW_HEARTBEAT_MS", "heartbeat_ms"), ("SRW_HISTORY_TURNS", "history_turns")):
        if key in env:
            try:
                setattr(cfg, attr, int(env[key]))
            except ValueError:
                raise GatewayConfigError(f"{key} is not an integer: {env[key]!r}") from None
    cfg.validate()
    return cfg


class Connection:
    """One WebSocket attachment with its own outbound queue and seq counters.

    The outbound queue is bounded; a consumer too slow to drain it is
    detached with a final slow_consumer error rather than allowed to
    block the session's pipeline.
    """

    def __init__(self, ws: WebSocket, session_id: str, kind: str):
        self.ws = ws
        self.session_id = session_id
        self.kind = kind  # robot | control
        self.seq_out = SeqCounter()
        self.seq_in = SeqValidator()
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=OUTBOUND_QUEUE_LIMIT)
        self.kill_reason: str | None = None
        self._kill_event = asyncio.Event()

    def enqueue(self, env_type: str, payload: dict[str, Any]) -> None:
        if self.kill_reason is not None:
            return
        try:
            self.queue.put_nowait((env_type, payload))
        except asyncio.QueueFull:
            self.kill("slow_consumer")

    def kill(self, reason: str) -> None:
        if self.kill_reason is None:
            self.kill_reason = reason
            self._kill_event.set()

    def _build_frame(self, env_type: str, payload: dict[str, Any]) -> str:
        return encode(
            MessageEnvelope(
                type=env_type,
                session_id=self.session_id,
                seq=self.seq_out.next(),
                ts=now_ms(),
                payload=payload,
            )
        )

    async def send_now(self, env_type: str, payload: dict[str, Any]) -> None:
        """Direct send outside the writer; only for pre-writer handshakes."""
        await self.ws.send_text(self._build_frame(env_type, payload))

    async def run_writer(self) -> None:
        kill_wait = asyncio.create_task(self._kill_event.wait())
        try:
            while True:
                getter = asyncio.create_task(self.queue.get())
                done, _ = await asyncio.wait(
                    {getter, kill_wait}, return_when=asyncio.FIRST_COMPLETED
                )
                if kill_wait in done:
                    getter.cancel()
                    await self._finalize_kill()
                    return
                env_type, payload = getter.result()
                try:
                    await self.ws.send_text(self._build_frame(env_type, payload))
                except SrwError:
                    log.exception("dropping unencodable %s envelope", env_type)
                except Exception:
                    self.kill_reason = self.kill_reason or "send_failed"
                    return
        finally:
            kill_wait.cancel()

    async def _finalize_kill(self) -> None:
        try:
            frame = self._build_frame(
                "error", {"code": self.kill_reason or "detached", "message": "connection detached"}
            )
            await asyncio.wait_for(self.ws.send_text(frame), timeout=1.0)
        except Exception:
            pass
        try:
            await self.ws.close(code=1013)
        except Exception:
            pass


class GatewayState:
    def __init__(self, config: GatewayConfig):
        self.config = config
        self.store = Store(config.data_dir)
        self.registry = SessionRegistry(self.store)
        self.providers = build_providers(
            config.provider_mode,
            llm_base_url=config.llm_base_url,
            stt_command=_split_command(os.environ.get("SRW_STT_COMMAND")),
            tts_command=_split_command(os.environ.get("SRW_TTS_COMMAND")),
        )
        self.runtimes: dict[str, SessionRuntime] = {}
        self.heartbeat_tasks: dict[str, asyncio.Task] = {}
        self.shutting_down = False

    def runtime(self, session_id: str) -> SessionRuntime:
        rt = self.runtimes.get(session_id)
        if rt is None:
            session = self.registry.get_session(session_id)  # raises not_found
            rt = SessionRuntime(
                session_id,
                self.registry,
                self.store,
                self.providers,
                history_turns=self.config.history_turns,
            )
            rt.start()
            if session.status != "active":
                rt.mark_closed()
            self.runtimes[session_id] = rt
        return rt

    def ensure_heartbeat(self, session_id: str) -> None:
        task = self.heartbeat_tasks.get(session_id)
        if task is None or task.done():
            self.heartbeat_tasks[session_id] = asyncio.get_running_loop().create_task(
                self._heartbeat_loop(session_id)
            )

    async def _heartbeat_loop(self, session_id: str) -> None:
        """Status envelope to every control channel each heartbeat period;
        runs only while a control channel is attached and the session is open."""
        period = self.config.heartbeat_ms / 1000
        while True:
            await asyncio.sleep(period)
            try:
                handle = self.registry.handle(session_id)
            except SrwError:
                return
            if handle.session.status != "active" or not handle.control_channels:
                return
            runtime = self.runtime(session_id)
            payload = {
                "robot_state": runtime.avatar.to_dict(),
                "robot_connected": handle.session.robot_connected,
                "control_connected": handle.session.control_connected,
                "config_version": handle.session.config_version,
            }
            for ch in list(handle.control_channels):
                ch.enqueue("heartbeat", dict(payload))

    async def close_session(self, session_id: str, reason: str) -> None:
        """Mark closed, broadcast session_closed, abort the in-flight turn."""
        rt = self.runtimes.get(session_id)
        if rt is not None:
            rt.mark_closed()  # new inputs answered session_closed from here on
        await self.registry.close_session(session_id, reason)
        if rt is not None:
            await rt.shutdown()
        task = self.heartbeat_tasks.pop(session_id, None)
        if task is not None:
            task.cancel()

    async def shutdown(self) -> None:
        if self.shutting_down:
            return
        self.shutting_down = True
        for sid in list(self.runtimes) + self.store.list_communication_ids():
            try:
                if self.registry.get_session(sid).status == "active":
                    await self.close_session(sid, "shutdown")
            except SrwError:
                continue
        # Give connection writers a beat to flush session_closed frames
        # before uvicorn tears the sockets down.
        await asyncio.sleep(0.1)
        for task in self.heartbeat_tasks.values():
            task.cancel()
        await self.providers.aclose()


def _split_command(raw: str | None) -> list[str] | None:
    if not raw:
        return None
    import shlex

    return shlex.split(raw)


def _error_response(status: int, code: str, message: str, **extra: Any) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message, **extra}}, status_code=status)


def create_app(config: GatewayConfig) -> FastAPI:
    state = GatewayState(config)
    app = FastAPI(title="srw-gateway")
    app.state.srw = state

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "sessions": state.registry.active_count()}

    @app.post("/api/sessions")
    async def create_session(body: dict):
        raw_config = body.get("config") or {}
        try:
            config_obj = merge_config(default_config(), raw_config)
            session = await state.registry.create_session(config_obj)
        except ConfigValidationError as exc:
            return _error_response(400, exc.code, exc.message, violations=exc.violations)
        except SrwError as exc:
            return _error_response(500, exc.code, exc.message)
        return JSONResponse({"session": session.to_dict()}, status_code=201)

    @app.get("/api/sessions/{session_id}")
    async def get_session(session_id: str):
        try:
            session = state.registry.get_session(session_id)
        except NotFoundError as exc:
            return _error_response(404, exc.code, exc.message)
        return {"session": session.to_dict()}

    @app.patch("/api/sessions/{session_id}/config")
    async def patch_config(session_id: str, body: dict):
        patch = body.get("patch")
        expected = body.get("expected_version")
        if not isinstance(patch, dict) or not isinstance(expected, int):
            return _error_response(400, "bad_request", "body must carry patch (object) and expected_version (int)")
        try:
            config_obj, version = await state.registry.update_config(session_id, patch, expected)
        except NotFoundError as exc:
            return _error_response(404, exc.code, exc.message)
        except VersionConflictError as exc:
            return _error_response(409, exc.code, exc.message, current_version=exc.current)
        except ConfigValidationError as exc:
            return _error_response(400, exc.code, exc.message, violations=exc.violations)
        except SessionClosedError as exc:
            return _error_response(409, exc.code, exc.message)
        return {"config": config_obj.to_dict(), "config_version": version}

    @app.delete("/api/sessions/{session_id}")
    async def delete_session(session_id: str):
        try:
            state.registry.get_session(session_id)
            await state.close_session(session_id, "closed_by_control")
            session = state.registry.get_session(session_id)
        except NotFoundError as exc:
            return _error_response(404, exc.code, exc.message)
        return {"session": session.to_dict()}

    @app.get("/api/sessions/{session_id}/transcript")
    async def transcript(session_id: str):
        try:
            lines = list(state.store.export_transcript(session_id))
        except NotFoundError as exc:
            return _error_response(404, exc.code, exc.message)
        return PlainTextResponse("\n".join(lines) + "\n")

    @app.websocket("/ws/robot/{session_id}")
    async def ws_robot(websocket: WebSocket, session_id: str):
        await _serve_ws(state, websocket, session_id, "robot")

    @app.websocket("/ws/control/{session_id}")
    async def ws_control(websocket: WebSocket, session_id: str):
        await _serve_ws(state, websocket, session_id, "control")

    return app


async def _serve_ws(state: GatewayState, ws: WebSocket, session_id: str, kind: str) -> None:
    await ws.accept()
    conn = Connection(ws, session_id, kind)
    try:
        await state.registry.attach(session_id, kind, conn)
    except SrwError as exc:
        try:
            await conn.send_now("error", {"code": exc.code, "message": exc.message})
        except Exception:
            pass
        await ws.close(code=1008)
        return

    writer = asyncio.get_running_loop().create_task(conn.run_writer())
    runtime = state.runtime(session_id)
    if kind == "robot":
        runtime.emit_state_snapshot()
    else:
        state.ensure_heartbeat(session_id)

    try:
        while True:
            message = await ws.receive()
            if message["type"] == "websocket.disconnect":
                break
            text = message.get("text")
            if text is None:
                conn.enqueue(
                    "error",
                    {"code": "parse_error", "message": "binary frames are not part of this protocol"},
                )
                continue
            await _route_frame(state, conn, text)
    except WebSocketDisconnect:
        pass
    except RuntimeError:
        pass  # receive after disconnect during shutdown races
    finally:
        await state.registry.detach(session_id, kind, conn)
        if kind == "robot":
            rt = state.runtimes.get(session_id)
            if rt is not None:
                rt.robot_detached()
        conn.kill("connection_closed")
        try:
            await asyncio.wait_for(writer, timeout=2.0)
        except Exception:
            writer.cancel()


async def _route_frame(state: GatewayState, conn: Connection, frame: str) -> None:
    try:
        env = protocol.decode(frame)
    except ProtocolError as exc:
        conn.enqueue("error", {"code": exc.code, "message": exc.message})
        return
    if not conn.seq_in.check(env.seq):
        conn.enqueue(
            "error",
            {
                "code": "seq_violation",
                "message": f"seq {env.seq} breaks the gapless per-connection sequence",
                "in_reply_to": env.seq,
            },
        )
        return

    def answer_error(code: str, message: str) -> None:
        conn.enqueue("error", {"code": code, "message": message, "in_reply_to": env.seq})

    if env.session_id != conn.session_id:
        answer_error("session_mismatch", f"envelope session {env.session_id!r} is not this channel's session")
        return
    allowed = ROBOT_SEND_TYPES if conn.kind == "robot" else CONTROL_SEND_TYPES
    if env.type not in allowed:
        answer_error("not_authorized", f"{conn.kind} channel may not send {env.type}")
        return

    try:
        if env.type == "user_text":
            request = TurnRequest(conn.session_id, "text", text=env.payload["text"])
            state.runtime(conn.session_id).submit_turn(request, sink=conn, in_seq=env.seq)
        elif env.type == "user_audio":
            request = TurnRequest(
                conn.session_id,
                env.payload["modality"],
                audio=AudioClip.from_dict(env.payload["audio"]),
            )
            state.runtime(conn.session_id).submit_turn(request, sink=conn, in_seq=env.seq)
        elif env.type == "wake_detected":
            state.runtime(conn.session_id).submit_wake(sink=conn, in_seq=env.seq)
        elif env.type == "state_update":
            if env.payload["phase"] != "idle":
                answer_error("unexpected_state_update", "robot screens report only playback completion (idle)")
                return
            confirmed = state.runtime(conn.session_id).confirm_playback(env.payload["blinking"])
            if not confirmed:
                answer_error("unexpected_playback_done", "no reply is awaiting playback confirmation")
        elif env.type == "config_update":
            await state.registry.update_config(
                conn.session_id, env.payload["config"], env.payload["config_version"]
            )
        elif env.type == "session_closed":
            await state.close_session(conn.session_id, env.payload["reason"] or "closed_by_control")
    except SrwError as exc:
        answer_error(exc.code, exc.message)


class _Server(uvicorn.Server):
    def install_signal_handlers(self) -> None:
        pass  # the gateway owns signal handling (graceful session close first)


async def serve(config: GatewayConfig) -> int:
    """Run until signalled; returns the process exit code."""
    try:
        app = create_app(config)
    except SrwError as exc:
        print(f"startup error: {exc.message}", file=sys.stderr)
        return 1
    state: GatewayState = app.state.srw

    ucfg = uvicorn.Config(
        app,
        host=config.bind_host,
        port=config.bind_port,
        log_level="warning",
        ws_ping_interval=None,
        ws_ping_timeout=None,
    )
    server = _Server(ucfg)
    loop = asyncio.get_running_loop()

    async def _graceful() -> None:
        await state.shutdown()
        server.should_exit = True

    def _on_signal() -> None:
        loop.create_task(_graceful())

    for sig in (signal.SIGTERM, signal.SIGINT):
        loop.add_signal_handler(sig, _on_signal)

    try:
        await server.serve()
    except (OSError, SystemExit) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    finally:
        await state.shutdown()
    return 0


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="srw-gateway",
        description="Wizard-of-Oz session gateway for social robot avatars",
    )
    parser.add_argument("--bind", help="host:port (default from SRW_BIND_ADDR)")
    parser.add_argument("--data-dir", help="storage directory (default from SRW_DATA_DIR)")
    parser.add_argument("--provider-mode", choices=["mock", "live"], help="default from SRW_PROVIDER_MODE")
    parser.add_argument("--llm-base-url", help="default from SRW_LLM_BASE_URL")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        env = dict(os.environ)
        if args.bind:
            env["SRW_BIND_ADDR"] = args.bind
        if args.data_dir:
            env["SRW_DATA_DIR"] = args.data_dir
        if args.provider_mode:
            env["SRW_PROVIDER_MODE"] = args.provider_mode
        if args.llm_base_url:
            env["SRW_LLM_BASE_URL"] = args.llm_base_url
        config = config_from_env(env)
    except GatewayConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        sys.exit(2)

    data_dir = Path(config.data_dir)
    try:
        data_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"startup error: cannot create data dir: {exc}", file=sys.stderr)
        sys.exit(1)

    sys.exit(asyncio.run(serve(config)))


if __name__ == "__main__":
    main()
