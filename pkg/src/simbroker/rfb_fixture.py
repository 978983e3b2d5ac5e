"""Synthetic RFB server with configurable response latency.

The instrumented endpoint for the latency harness: after each key/pointer
event it schedules a framebuffer update for the configured dirty rectangle,
delivered ``response_delay`` later — but only in reply to a pending-or-next
FramebufferUpdateRequest, since the protocol is client-paced. Per-sample
delay lists are consumed in order (the last value repeats once exhausted).

Pixel payloads are a constant fill; the harness measures timing, not imagery.
Optionally speaks RFB inside binary WebSocket frames so it can sit behind the
gateway like a real web-VNC endpoint.
"""

from __future__ import annotations

import asyncio
import heapq
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from . import rfb
from .websocket import OP_BINARY, OP_CLOSE, OP_CONT, WsError, decode_frame, encode_frame, server_handshake

__all__ = ["ServerFixtureConfig", "RfbFixture"]

_FILL_BYTE = 0x2A


@dataclass(frozen=True)
class ServerFixtureConfig:
    response_delay: Union[float, Sequence[float]] = 0.0  # milliseconds
    dirty_rect: Optional[tuple[int, int, int, int]] = (0, 0, 16, 16)
    width: int = 640
    height: int = 480
    name: str = "fixture"

    def __post_init__(self) -> None:
        if any(d < 0 for d in self.delays()):
            raise ValueError("response_delay must be >= 0")

    def delays(self) -> list[float]:
        if isinstance(self.response_delay, (int, float)):
            return [float(self.response_delay)]
        return [float(d) for d in self.response_delay]


class _ByteStream:
    """Uniform byte stream over plain TCP or binary WebSocket frames."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, ws: bool):
        self._reader = reader
        self._writer = writer
        self._ws = ws
        self._frame_buf = b""
        self._pending = b""

    async def read_some(self) -> bytes:
        if self._pending:
            out, self._pending = self._pending, b""
            return out
        if not self._ws:
            return await self._reader.read(4096)
        while True:
            try:
                opcode, payload, _fin, used = decode_frame(self._frame_buf)
            except WsError:
                chunk = await self._reader.read(4096)
                if not chunk:
                    return b""
                self._frame_buf += chunk
                continue
            self._frame_buf = self._frame_buf[used:]
            if opcode == OP_CLOSE:
                return b""
            if opcode in (OP_BINARY, OP_CONT):
                return payload
            # text/ping/pong are irrelevant to a measurement client

    async def read_exact(self, size: int) -> bytes:
        buf = b""
        while len(buf) < size:
            chunk = await self.read_some()
            if not chunk:
                raise ConnectionError("peer closed")
            buf += chunk
        buf, self._pending = buf[:size], buf[size:] + self._pending
        return buf

    async def write(self, data: bytes) -> None:
        if self._ws:
            self._writer.write(encode_frame(data, OP_BINARY))
        else:
            self._writer.write(data)
        await self._writer.drain()


class _ConnState:
    def __init__(self) -> None:
        self.cond = asyncio.Condition()
        self.pending_request = False
        self.due: list[float] = []


async def _cancel_remaining() -> None:
    tasks = [t for t in asyncio.all_tasks() if t is not asyncio.current_task()]
    for task in tasks:
        task.cancel()
    await asyncio.gather(*tasks, return_exceptions=True)


class RfbFixture:
    """Serves the RFB 3.8 subset on its own event-loop thread.

    Handles many concurrent connections, each with independent delay state.
    """

    def __init__(
        self,
        config: ServerFixtureConfig | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        ws: bool = False,
    ):
        self.config = config or ServerFixtureConfig()
        self._host = host
        self._requested_port = port
        self._ws = ws
        self.port: int = port
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._server: asyncio.base_events.Server | None = None

    def start(self) -> None:
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._loop.run_forever, daemon=True)
        self._thread.start()
        fut = asyncio.run_coroutine_threadsafe(self._bind(), self._loop)
        fut.result(timeout=10)

    def stop(self) -> None:
        if self._loop is None:
            return
        fut = asyncio.run_coroutine_threadsafe(self._close(), self._loop)
        fut.result(timeout=10)
        asyncio.run_coroutine_threadsafe(_cancel_remaining(), self._loop).result(timeout=10)
        self._loop.call_soon_threadsafe(self._loop.stop)
        assert self._thread is not None
        self._thread.join(timeout=10)
        self._loop.close()
        self._loop = None

    def __enter__(self) -> "RfbFixture":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    async def _bind(self) -> None:
        self._server = await asyncio.start_server(self._handle, self._host, self._requested_port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def _close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        sock = writer.get_extra_info("socket")
        if sock is not None:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            if self._ws:
                await server_handshake(reader, writer)
            await self._session(_ByteStream(reader, writer, self._ws))
        except (ConnectionError, asyncio.IncompleteReadError, WsError):
            pass
        finally:
            try:
                writer.close()
            except RuntimeError:
                pass

    async def _session(self, stream: _ByteStream) -> None:
        cfg = self.config
        await stream.write(rfb.PROTOCOL_VERSION)
        version = await stream.read_exact(12)
        if not version.startswith(b"RFB 003."):
            return
        await stream.write(bytes([1, rfb.SECURITY_NONE]))
        choice = await stream.read_exact(1)
        if choice[0] != rfb.SECURITY_NONE:
            return
        await stream.write(b"\x00\x00\x00\x00")  # SecurityResult: ok
        await stream.read_exact(1)  # ClientInit; always treated as shared
        name = cfg.name.encode("utf-8")
        await stream.write(
            struct.pack(">HH", cfg.width, cfg.height)
            + rfb.PixelFormat().pack()
            + struct.pack(">I", len(name))
            + name
        )

        delays = cfg.delays()
        state = _ConnState()
        loop = asyncio.get_running_loop()
        sender = asyncio.create_task(self._sender(stream, state, loop))
        buf = b""
        events_seen = 0
        try:
            while True:
                try:
                    msg, used = rfb.decode_client(buf)
                except rfb.TruncatedMessage:
                    chunk = await stream.read_some()
                    if not chunk:
                        return
                    buf += chunk
                    continue
                except rfb.RfbError:
                    return  # malformed client input closes this connection
                buf = buf[used:]
                if isinstance(msg, rfb.FramebufferUpdateRequest):
                    if msg.incremental:
                        async with state.cond:
                            state.pending_request = True
                            state.cond.notify_all()
                    else:
                        # full-frame refresh is answered immediately
                        await stream.write(self._update(0, 0, cfg.width, cfg.height))
                elif isinstance(msg, (rfb.KeyEvent, rfb.PointerEvent)):
                    if cfg.dirty_rect is not None:
                        idx = min(events_seen, len(delays) - 1)
                        fire_at = loop.time() + delays[idx] / 1000.0
                        async with state.cond:
                            heapq.heappush(state.due, fire_at)
                            state.cond.notify_all()
                    events_seen += 1
        finally:
            sender.cancel()

    def _update(self, x: int, y: int, w: int, h: int) -> bytes:
        payload = bytes([_FILL_BYTE]) * (w * h * rfb.BYTES_PER_PIXEL)
        return rfb.encode_server(
            rfb.FramebufferUpdate((rfb.Rectangle(x, y, w, h, rfb.ENCODING_RAW, payload),))
        )

    async def _sender(self, stream: _ByteStream, state: _ConnState, loop) -> None:
        rect = self.config.dirty_rect
        while True:
            async with state.cond:
                while not (state.due and state.pending_request):
                    await state.cond.wait()
                fire_at = state.due[0]
            wait = fire_at - loop.time()
            if wait > 0:
                await asyncio.sleep(wait)
                continue  # re-check: an earlier-due update may have been queued
            async with state.cond:
                if not (state.due and state.pending_request and state.due[0] <= loop.time()):
                    continue
                heapq.heappop(state.due)
                state.pending_request = False
            assert rect is not None  # events only queue work when a rect is configured
            await stream.write(self._update(*rect))
