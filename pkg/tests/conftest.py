"""Shared test helpers: async runner, independent WAV fixture builder,
and a real-server-subprocess harness."""

from __future__ import annotations

import asyncio
import contextlib
import os
import signal
import socket
import struct
import subprocess
import sys
import time
from pathlib import Path

import httpx
import pytest


def run(coro):
    """Run one coroutine to completion on a fresh event loop."""
    return asyncio.run(coro)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def make_wav_bytes(
    transcript: str | None,
    n_frames: int = 1600,
    sample_rate: int = 16000,
    put_list_first: bool = False,
) -> bytes:
    """Hand-assembled RIFF/WAVE fixture, independent of srw.audio's writer.

    Chunk order is configurable to prove the reader walks chunks rather
    than assuming a layout.
    """
    pcm = struct.pack(f"<{n_frames}h", *([0] * n_frames))
    fmt = b"fmt " + struct.pack("<I", 16) + struct.pack(
        "<HHIIHH", 1, 1, sample_rate, sample_rate * 2, 2, 16
    )
    data = b"data" + struct.pack("<I", len(pcm)) + pcm
    chunks = [fmt, data]
    if transcript is not None:
        text = transcript.encode("utf-8") + b"\x00"
        if len(text) % 2:
            text += b"\x00"
        info = b"INFO" + b"ICMT" + struct.pack("<I", len(text)) + text
        lst = b"LIST" + struct.pack("<I", len(info)) + info
        chunks = [fmt, lst, data] if put_list_first else [fmt, data, lst]
    body = b"WAVE" + b"".join(chunks)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def make_clip_dict(transcript: str | None, n_frames: int = 1600, sample_rate: int = 16000) -> dict:
    import base64

    wav = make_wav_bytes(transcript, n_frames=n_frames, sample_rate=sample_rate)
    return {
        "payload_b64": base64.b64encode(wav).decode(),
        "mime": "audio/wav",
        "sample_rate_hz": sample_rate,
        "duration_ms": round(n_frames * 1000 / sample_rate),
    }


class ServerProc:
    """srw-gateway subprocess on a free port with mock providers."""

    def __init__(self, data_dir: Path, env_overrides: dict[str, str] | None = None):
        self.port = free_port()
        self.url = f"http://127.0.0.1:{self.port}"
        env = dict(os.environ)
        env.update(
            {
                "SRW_BIND_ADDR": f"127.0.0.1:{self.port}",
                "SRW_PROVIDER_MODE": "mock",
                "SRW_DATA_DIR": str(data_dir),
            }
        )
        env.update(env_overrides or {})
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "srw.gateway"],
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
        )

    def wait_ready(self, timeout_s: float = 15.0) -> None:
        deadline = time.time() + timeout_s
        while time.time() < deadline:
            if self.proc.poll() is not None:
                raise RuntimeError(
                    f"gateway exited early ({self.proc.returncode}): {self.proc.stdout.read()}"
                )
            try:
                resp = httpx.get(f"{self.url}/healthz", timeout=1.0)
                if resp.status_code == 200:
                    return
            except httpx.HTTPError:
                time.sleep(0.05)
        raise RuntimeError("gateway did not become ready")

    def terminate(self, sig=signal.SIGTERM, timeout_s: float = 10.0) -> int:
        if self.proc.poll() is None:
            self.proc.send_signal(sig)
            try:
                self.proc.wait(timeout=timeout_s)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        return self.proc.returncode


@contextlib.contextmanager
def running_server(data_dir: Path, **env_overrides: str):
    server = ServerProc(data_dir, env_overrides or None)
    try:
        server.wait_ready()
        yield server
    finally:
        server.terminate()


@pytest.fixture()
def server(tmp_path):
    with running_server(tmp_path / "data") as s:
        yield s
