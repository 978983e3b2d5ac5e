"""Embedded reverse proxy for per-session backends.

Routes HTTP by Host header, passes WebSocket upgrades through as transparent
byte relays (frames are never parsed), and exposes raw TCP stream proxies for
SSH. Route tables are published atomically with a strictly increasing
generation; established relays keep the backend they connected to.

The proxy runs an asyncio loop on its own daemon thread so the single-writer
controller (and tests) can drive it with plain synchronous calls.
"""

from __future__ import annotations

import asyncio
import mimetypes
import socket
import ssl
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

__all__ = [
    "TlsMaterial",
    "RouteTable",
    "RelayStats",
    "StaleGeneration",
    "resolve_route",
    "export_proxy_config",
    "Gateway",
]

_HOP_BY_HOP = {
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailers",
    "upgrade",
}
_MAX_HEAD = 64 * 1024


class StaleGeneration(Exception):
    pass


class BackendUnreachable(Exception):
    pass


@dataclass(frozen=True)
class TlsMaterial:
    cert_path: str
    key_path: str


@dataclass(frozen=True)
class RouteTable:
    http_routes: Mapping[str, tuple[str, int]] = field(default_factory=dict)
    stream_routes: Mapping[int, tuple[str, int]] = field(default_factory=dict)
    static_routes: Mapping[str, str] = field(default_factory=dict)
    tls: Optional[TlsMaterial] = None
    generation: int = 1

    def with_generation(self, generation: int) -> "RouteTable":
        return replace(self, generation=generation)


@dataclass
class RelayStats:
    route: str
    mode: str  # http | websocket | raw-tcp
    opened_at: float
    closed_at: float = 0.0
    bytes_up: int = 0
    bytes_down: int = 0


def _normalize_host(host_header: str) -> str:
    host = host_header.strip().lower()
    if host.startswith("["):  # bracketed IPv6 literal
        return host.split("]")[0] + "]"
    return host.rsplit(":", 1)[0] if ":" in host else host


def resolve_route(host_header: str, table: RouteTable) -> Optional[tuple[str, int]]:
    """Exact, case-insensitive hostname match; port suffix ignored."""
    return dict(table.http_routes).get(_normalize_host(host_header))


def export_proxy_config(table: RouteTable) -> str:
    """Emit an nginx-dialect config equivalent to the live routing table.

    Deterministic: virtual hosts sorted by hostname, stream blocks by port.
    """
    listen = "443 ssl" if table.tls else "8080"
    lines = ["# generated reverse-proxy configuration", "http {"]
    for hostname in sorted(table.http_routes):
        host, port = table.http_routes[hostname]
        lines += [
            "    server {",
            f"        listen {listen};",
            f"        server_name {hostname};",
        ]
        if table.tls:
            lines += [
                f"        ssl_certificate {table.tls.cert_path};",
                f"        ssl_certificate_key {table.tls.key_path};",
            ]
        lines += [
            "        location / {",
            f"            proxy_pass http://{host}:{port};",
            "            proxy_http_version 1.1;",
            "            proxy_set_header Host $host;",
            "            proxy_set_header Upgrade $http_upgrade;",
            '            proxy_set_header Connection "upgrade";',
            "        }",
            "    }",
        ]
    lines.append("}")
    lines.append("stream {")
    for port in sorted(table.stream_routes):
        bhost, bport = table.stream_routes[port]
        lines += [
            "    server {",
            f"        listen {port};",
            f"        proxy_pass {bhost}:{bport};",
            "    }",
        ]
    lines.append("}")
    return "\n".join(lines) + "\n"


def _strip_hop_by_hop(headers: list[tuple[str, str]]) -> list[tuple[str, str]]:
    # Connection may name additional per-hop headers; Transfer-Encoding is
    # kept because the body bytes are relayed verbatim.
    extra = set()
    for name, value in headers:
        if name.lower() == "connection":
            extra |= {v.strip().lower() for v in value.split(",")}
    drop = _HOP_BY_HOP | extra
    return [(n, v) for n, v in headers if n.lower() not in drop]


def _parse_head(head: bytes) -> tuple[str, list[tuple[str, str]]]:
    text = head.decode("latin-1")
    lines = text.split("\r\n")
    headers = []
    for line in lines[1:]:
        if not line:
            continue
        name, _, value = line.partition(":")
        headers.append((name.strip(), value.strip()))
    return lines[0], headers


def _header(headers: list[tuple[str, str]], name: str) -> Optional[str]:
    for n, v in headers:
        if n.lower() == name.lower():
            return v
    return None


def _serialize(first_line: str, headers: list[tuple[str, str]]) -> bytes:
    out = [first_line] + [f"{n}: {v}" for n, v in headers] + ["", ""]
    return "\r\n".join(out).encode("latin-1")


async def _read_head(reader: asyncio.StreamReader) -> bytes:
    head = await reader.readuntil(b"\r\n\r\n")
    if len(head) > _MAX_HEAD:
        raise ValueError("header block too large")
    return head


def _set_nodelay(writer: asyncio.StreamWriter) -> None:
    sock = writer.get_extra_info("socket")
    if sock is not None:
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass


async def _pump(
    reader: asyncio.StreamReader,
    writer: asyncio.StreamWriter,
    stats: RelayStats,
    direction: str,
) -> None:
    try:
        while True:
            data = await reader.read(65536)
            if not data:
                break
            writer.write(data)
            await writer.drain()
            if direction == "up":
                stats.bytes_up += len(data)
            else:
                stats.bytes_down += len(data)
    except (ConnectionError, asyncio.IncompleteReadError):
        pass
    finally:
        try:
            if writer.can_write_eof():
                writer.write_eof()
            else:
                writer.close()
        except (OSError, RuntimeError):
            pass


async def relay_streams(
    client_reader: asyncio.StreamReader,
    client_writer: asyncio.StreamWriter,
    backend_reader: asyncio.StreamReader,
    backend_writer: asyncio.StreamWriter,
    stats: RelayStats,
) -> RelayStats:
    """Bidirectional transparent byte relay until both directions close."""
    up = _pump(client_reader, backend_writer, stats, "up")
    down = _pump(backend_reader, client_writer, stats, "down")
    await asyncio.gather(up, down)
    stats.closed_at = time.time()
    return stats


class Gateway:
    """Reverse proxy with one HTTP(S) listener and dynamic raw-TCP listeners."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        http_port: int = 8080,
        tls: TlsMaterial | None = None,
    ):
        self._host = host
        self._requested_port = http_port
        self._tls = tls
        self._table = RouteTable(generation=0)
        self._table_lock = threading.Lock()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._http_server: asyncio.base_events.Server | None = None
        self._stream_servers: dict[int, asyncio.base_events.Server] = {}
        self._stats: list[RelayStats] = []
        self._stats_lock = threading.Lock()
        self.http_port: int = http_port

    # -- route table ---------------------------------------------------

    @property
    def table(self) -> RouteTable:
        return self._table

    def publish_routes(self, new_table: RouteTable) -> None:
        """Swap the routing table; new connections use it, open relays do not."""
        with self._table_lock:
            if new_table.generation <= self._table.generation:
                raise StaleGeneration(
                    f"generation {new_table.generation} <= current {self._table.generation}"
                )
            self._table = new_table
        if self._loop is not None:
            fut = asyncio.run_coroutine_threadsafe(self._reconcile_streams(), self._loop)
            fut.result(timeout=10)

    def relay_stats(self) -> list[RelayStats]:
        with self._stats_lock:
            return list(self._stats)

    def _track(self, stats: RelayStats) -> RelayStats:
        with self._stats_lock:
            self._stats.append(stats)
        return stats

    # -- lifecycle -------------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            raise RuntimeError("gateway already started")
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._loop.run_forever, daemon=True)
        self._thread.start()
        fut = asyncio.run_coroutine_threadsafe(self._bind(), self._loop)
        fut.result(timeout=10)

    def stop(self) -> None:
        if self._loop is None:
            return
        fut = asyncio.run_coroutine_threadsafe(self._shutdown(), self._loop)
        fut.result(timeout=10)
        asyncio.run_coroutine_threadsafe(_cancel_remaining(), self._loop).result(timeout=10)
        self._loop.call_soon_threadsafe(self._loop.stop)
        assert self._thread is not None
        self._thread.join(timeout=10)
        self._loop.close()
        self._loop = None
        self._thread = None

    async def _bind(self) -> None:
        ssl_ctx = None
        tls = self._tls or self._table.tls
        if tls is not None:
            ssl_ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            ssl_ctx.load_cert_chain(tls.cert_path, tls.key_path)
        self._http_server = await asyncio.start_server(
            self._handle_http, self._host, self._requested_port, ssl=ssl_ctx
        )
        self.http_port = self._http_server.sockets[0].getsockname()[1]
        await self._reconcile_streams()

    async def _shutdown(self) -> None:
        if self._http_server is not None:
            self._http_server.close()
            await self._http_server.wait_closed()
        for server in self._stream_servers.values():
            server.close()
            await server.wait_closed()
        self._stream_servers.clear()

    async def _reconcile_streams(self) -> None:
        wanted = dict(self._table.stream_routes)
        for port in list(self._stream_servers):
            if port not in wanted:
                server = self._stream_servers.pop(port)
                server.close()
                await server.wait_closed()
        for port, backend in wanted.items():
            if port not in self._stream_servers:
                self._stream_servers[port] = await asyncio.start_server(
                    lambda r, w, p=port: self._handle_stream(r, w, p),
                    self._host,
                    port,
                )

    # -- raw TCP ---------------------------------------------------------

    async def _handle_stream(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, port: int
    ) -> None:
        table = self._table
        backend = dict(table.stream_routes).get(port)
        stats = self._track(RelayStats(route=str(port), mode="raw-tcp", opened_at=time.time()))
        _set_nodelay(writer)
        try:
            if backend is None:
                return
            try:
                breader, bwriter = await asyncio.open_connection(*backend)
            except OSError:
                return  # backend down: close in raw mode
            _set_nodelay(bwriter)
            await relay_streams(reader, writer, breader, bwriter, stats)
            bwriter.close()
        finally:
            stats.closed_at = stats.closed_at or time.time()
            writer.close()

    # -- HTTP ------------------------------------------------------------

    async def _handle_http(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        table = self._table  # one generation per connection
        peer = writer.get_extra_info("peername")
        peer_ip = peer[0] if peer else "unknown"
        _set_nodelay(writer)
        try:
            while True:
                try:
                    raw_head = await _read_head(reader)
                except (asyncio.IncompleteReadError, ValueError, ConnectionError):
                    return
                first_line, headers = _parse_head(raw_head)
                host = _header(headers, "host") or ""
                hostname = _normalize_host(host)

                static_root = dict(table.static_routes).get(hostname)
                if static_root is not None:
                    keep = await self._serve_static(writer, first_line, static_root)
                    if not keep:
                        return
                    continue

                backend = resolve_route(host, table)
                if backend is None:
                    await _respond(writer, 404, b"")
                    return

                upgrade = (_header(headers, "upgrade") or "").lower() == "websocket"
                if upgrade:
                    await self._proxy_upgrade(
                        reader, writer, raw_head, hostname, backend
                    )
                    return
                keep = await self._proxy_http(
                    reader, writer, first_line, headers, hostname, backend, peer_ip
                )
                if not keep:
                    return
        finally:
            try:
                writer.close()
            except RuntimeError:
                pass

    async def _serve_static(
        self, writer: asyncio.StreamWriter, first_line: str, root: str
    ) -> bool:
        parts = first_line.split()
        path = parts[1] if len(parts) > 1 else "/"
        path = path.split("?")[0]
        if path.endswith("/"):
            path += "index.html"
        base = Path(root).resolve()
        target = (base / path.lstrip("/")).resolve()
        if base not in target.parents and target != base:
            await _respond(writer, 404, b"")
            return True
        if not target.is_file():
            await _respond(writer, 404, b"")
            return True
        body = target.read_bytes()
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        await _respond(writer, 200, body, content_type=ctype)
        return True

    async def _proxy_upgrade(
        self,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        raw_head: bytes,
        hostname: str,
        backend: tuple[str, int],
    ) -> None:
        stats = self._track(
            RelayStats(route=hostname, mode="websocket", opened_at=time.time())
        )
        try:
            breader, bwriter = await asyncio.open_connection(*backend)
        except OSError:
            await _respond(writer, 502, b"")
            stats.closed_at = time.time()
            return
        _set_nodelay(bwriter)
        # handshake is forwarded verbatim
        bwriter.write(raw_head)
        await bwriter.drain()
        try:
            resp_head = await _read_head(breader)
        except (asyncio.IncompleteReadError, ConnectionError):
            await _respond(writer, 502, b"")
            bwriter.close()
            stats.closed_at = time.time()
            return
        writer.write(resp_head)
        await writer.drain()
        status_line, _ = _parse_head(resp_head)
        if " 101 " not in status_line + " ":
            # upgrade rejected by backend: the response was relayed; no relay starts
            stats.mode = "http"
            stats.closed_at = time.time()
            bwriter.close()
            return
        await relay_streams(reader, writer, breader, bwriter, stats)
        bwriter.close()

    async def _proxy_http(
        self,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        first_line: str,
        headers: list[tuple[str, str]],
        hostname: str,
        backend: tuple[str, int],
        peer_ip: str,
    ) -> bool:
        stats = self._track(RelayStats(route=hostname, mode="http", opened_at=time.time()))
        body = b""
        clen = _header(headers, "content-length")
        if clen:
            body = await reader.readexactly(int(clen))
        client_wants_close = (_header(headers, "connection") or "").lower() == "close"

        out_headers = _strip_hop_by_hop(headers)
        xff = _header(headers, "x-forwarded-for")
        out_headers = [(n, v) for n, v in out_headers if n.lower() != "x-forwarded-for"]
        out_headers.append(("X-Forwarded-For", f"{xff}, {peer_ip}" if xff else peer_ip))
        out_headers.append(("Connection", "close"))

        try:
            breader, bwriter = await asyncio.open_connection(*backend)
        except OSError:
            await _respond(writer, 502, b"")
            stats.closed_at = time.time()
            return False
        _set_nodelay(bwriter)
        request = _serialize(first_line, out_headers) + body
        bwriter.write(request)
        await bwriter.drain()
        stats.bytes_up += len(body)

        try:
            resp_head = await _read_head(breader)
        except (asyncio.IncompleteReadError, ConnectionError):
            await _respond(writer, 502, b"")
            bwriter.close()
            stats.closed_at = time.time()
            return False
        status_line, resp_headers = _parse_head(resp_head)
        resp_clen = _header(resp_headers, "content-length")
        out_resp = _strip_hop_by_hop(resp_headers)
        keep_alive = resp_clen is not None and not client_wants_close
        out_resp.append(("Connection", "keep-alive" if keep_alive else "close"))
        writer.write(_serialize(status_line, out_resp))
        if resp_clen is not None:
            remaining = int(resp_clen)
            while remaining:
                chunk = await breader.read(min(65536, remaining))
                if not chunk:
                    break
                writer.write(chunk)
                await writer.drain()
                stats.bytes_down += len(chunk)
                remaining -= len(chunk)
        else:
            while True:
                chunk = await breader.read(65536)
                if not chunk:
                    break
                writer.write(chunk)
                await writer.drain()
                stats.bytes_down += len(chunk)
        await writer.drain()
        bwriter.close()
        stats.closed_at = time.time()
        return keep_alive


async def _cancel_remaining() -> None:
    tasks = [t for t in asyncio.all_tasks() if t is not asyncio.current_task()]
    for task in tasks:
        task.cancel()
    await asyncio.gather(*tasks, return_exceptions=True)


async def _respond(
    writer: asyncio.StreamWriter,
    status: int,
    body: bytes,
    content_type: str = "text/plain",
) -> None:
    reason = {200: "OK", 404: "Not Found", 502: "Bad Gateway"}.get(status, "Error")
    head = (
        f"HTTP/1.1 {status} {reason}\r\n"
        f"Content-Length: {len(body)}\r\n"
        f"Content-Type: {content_type}\r\n"
        "Connection: keep-alive\r\n\r\n"
    )
    try:
        writer.write(head.encode("latin-1") + body)
        await writer.drain()
    except (ConnectionError, RuntimeError):
        pass
