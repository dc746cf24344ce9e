"""In-process gateway server plus a minimal envelope-speaking WS client."""

from __future__ import annotations

import asyncio
import contextlib
import re

import uvicorn
import websockets

from conftest import free_port
from srw import protocol
from srw.gateway import GatewayConfig, create_app
from srw.protocol import MessageEnvelope, SeqCounter, encode, now_ms


class _QuietServer(uvicorn.Server):
    def install_signal_handlers(self) -> None:
        pass


@contextlib.asynccontextmanager
async def in_process_server(tmp_path, **overrides):
    port = free_port()
    config = GatewayConfig(
        bind_host="127.0.0.1",
        bind_port=port,
        data_dir=str(tmp_path / "data"),
        **overrides,
    )
    config.validate()
    app = create_app(config)
    ucfg = uvicorn.Config(
        app,
        host=config.bind_host,
        port=port,
        log_level="error",
        ws_ping_interval=None,
        ws_ping_timeout=None,
    )
    server = _QuietServer(ucfg)
    task = asyncio.create_task(server.serve())
    while not server.started:
        if task.done():
            task.result()
            raise RuntimeError("server stopped before starting")
        await asyncio.sleep(0.01)
    try:
        yield f"http://127.0.0.1:{port}", app.state.srw
    finally:
        await app.state.srw.shutdown()
        server.should_exit = True
        await task


class WsClient:
    """Envelope-level wrapper over one websocket connection."""

    def __init__(self, ws, session_id: str):
        self.ws = ws
        self.session_id = session_id
        self.seq = SeqCounter()

    @classmethod
    async def connect(cls, base_url: str, kind: str, session_id: str) -> "WsClient":
        ws_url = re.sub(r"^http", "ws", base_url)
        ws = await websockets.connect(f"{ws_url}/ws/{kind}/{session_id}", ping_interval=None)
        return cls(ws, session_id)

    async def send(self, env_type: str, payload: dict) -> int:
        seq = self.seq.next()
        env = MessageEnvelope(
            type=env_type, session_id=self.session_id, seq=seq, ts=now_ms(), payload=payload
        )
        await self.ws.send(encode(env))
        return seq

    async def send_raw(self, frame: str) -> None:
        await self.ws.send(frame)

    async def recv(self, timeout: float = 5.0) -> MessageEnvelope:
        frame = await asyncio.wait_for(self.ws.recv(), timeout=timeout)
        return protocol.decode(frame if isinstance(frame, str) else frame.decode())

    async def recv_type(self, env_type: str, timeout: float = 5.0) -> MessageEnvelope:
        """Read frames until one of the requested type arrives."""
        deadline = asyncio.get_running_loop().time() + timeout
        while True:
            remaining = deadline - asyncio.get_running_loop().time()
            if remaining <= 0:
                raise asyncio.TimeoutError(f"no {env_type} envelope within {timeout}s")
            env = await self.recv(timeout=remaining)
            if env.type == env_type:
                return env

    async def close(self) -> None:
        try:
            await self.ws.close()
        except Exception:
            pass


async def create_session(base_url: str, config: dict | None = None) -> dict:
    import httpx

    async with httpx.AsyncClient(base_url=base_url) as client:
        resp = await client.post("/api/sessions", json={"config": config or {}})
        assert resp.status_code == 201, resp.text
        return resp.json()["session"]
