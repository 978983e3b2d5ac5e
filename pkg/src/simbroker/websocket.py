"""Minimal WebSocket (RFC 6455) subset: handshake plus binary-frame framing.

Enough to tunnel a byte protocol in binary frames the way noVNC does: a
synchronous client side (used by the latency harness) and asyncio server-side
helpers (used by the RFB fixture). Fragmentation is handled on receive;
sends are single unfragmented frames. No extensions, no subprotocols.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct
from typing import Optional
from urllib.parse import urlparse

__all__ = [
    "OP_TEXT",
    "OP_BINARY",
    "OP_CLOSE",
    "OP_PING",
    "OP_PONG",
    "WsError",
    "IncompleteFrame",
    "accept_key",
    "encode_frame",
    "decode_frame",
    "WsSocket",
    "server_handshake",
]

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WsError(Exception):
    pass


class IncompleteFrame(WsError):
    """More bytes are needed before the frame can be decoded."""


def accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def encode_frame(payload: bytes, opcode: int = OP_BINARY, mask: bool = False, fin: bool = True) -> bytes:
    head = bytearray()
    head.append((0x80 if fin else 0) | opcode)
    length = len(payload)
    mask_bit = 0x80 if mask else 0
    if length < 126:
        head.append(mask_bit | length)
    elif length < 1 << 16:
        head.append(mask_bit | 126)
        head += struct.pack(">H", length)
    else:
        head.append(mask_bit | 127)
        head += struct.pack(">Q", length)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(head) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes, bool, int]:
    """Decode one frame from ``buf``.

    Returns (opcode, payload, fin, bytes_consumed); raises IncompleteFrame
    when the buffer does not yet hold a whole frame.
    """
    if len(buf) < 2:
        raise IncompleteFrame
    fin = bool(buf[0] & 0x80)
    opcode = buf[0] & 0x0F
    masked = bool(buf[1] & 0x80)
    length = buf[1] & 0x7F
    pos = 2
    if length == 126:
        if len(buf) < pos + 2:
            raise IncompleteFrame
        (length,) = struct.unpack_from(">H", buf, pos)
        pos += 2
    elif length == 127:
        if len(buf) < pos + 8:
            raise IncompleteFrame
        (length,) = struct.unpack_from(">Q", buf, pos)
        pos += 8
    key = b""
    if masked:
        if len(buf) < pos + 4:
            raise IncompleteFrame
        key = buf[pos : pos + 4]
        pos += 4
    if len(buf) < pos + length:
        raise IncompleteFrame
    payload = buf[pos : pos + length]
    if masked:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return opcode, payload, fin, pos + length


class WsSocket:
    """Client-side WebSocket over a blocking TCP socket.

    Sends masked binary frames (as clients must); reassembles fragmented
    messages on receive and answers pings transparently.
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = b""

    @classmethod
    def connect(
        cls,
        url: str,
        timeout: float = 10.0,
        connect_addr: Optional[tuple[str, int]] = None,
        host_header: Optional[str] = None,
    ) -> "WsSocket":
        """Open and upgrade a connection.

        ``connect_addr`` dials a specific (ip, port) while keeping the URL's
        hostname in the Host header — needed when the virtual hostname has no
        DNS entry (the usual case against the gateway in tests).
        """
        parsed = urlparse(url)
        if parsed.scheme != "ws":
            raise WsError(f"unsupported scheme {parsed.scheme!r}")
        host = parsed.hostname or "127.0.0.1"
        port = parsed.port or 80
        path = parsed.path or "/"
        sock = socket.create_connection(connect_addr or (host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        key = base64.b64encode(os.urandom(16)).decode("ascii")
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host_header or f'{host}:{port}'}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        )
        sock.sendall(request.encode("latin-1"))
        head = b""
        while b"\r\n\r\n" not in head:
            chunk = sock.recv(4096)
            if not chunk:
                raise WsError("connection closed during handshake")
            head += chunk
        head, _, extra = head.partition(b"\r\n\r\n")
        status = head.split(b"\r\n", 1)[0]
        if b" 101 " not in status + b" ":
            raise WsError(f"upgrade rejected: {status.decode('latin-1')}")
        expected = accept_key(key).encode("ascii")
        if expected not in head:
            raise WsError("bad Sec-WebSocket-Accept")
        ws = cls(sock)
        ws._buf = extra
        return ws

    def settimeout(self, timeout: Optional[float]) -> None:
        self._sock.settimeout(timeout)

    def send_binary(self, payload: bytes) -> None:
        self._sock.sendall(encode_frame(payload, OP_BINARY, mask=True))

    def recv_message(self) -> tuple[int, bytes]:
        """Return the next (opcode, payload) message, reassembling fragments."""
        message = b""
        opcode = None
        while True:
            try:
                frame_op, payload, fin, used = decode_frame(self._buf)
            except IncompleteFrame:
                chunk = self._sock.recv(65536)
                if not chunk:
                    raise ConnectionError("websocket closed") from None
                self._buf += chunk
                continue
            self._buf = self._buf[used:]
            if frame_op == OP_PING:
                self._sock.sendall(encode_frame(payload, OP_PONG, mask=True))
                continue
            if frame_op == OP_CLOSE:
                raise ConnectionError("websocket close frame")
            if frame_op != OP_CONT:
                opcode = frame_op
            message += payload
            if fin:
                return opcode or OP_BINARY, message

    def close(self) -> None:
        try:
            self._sock.sendall(encode_frame(b"", OP_CLOSE, mask=True))
        except OSError:
            pass
        self._sock.close()


async def server_handshake(reader, writer) -> str:
    """Perform the server side of the upgrade; returns the request path."""
    head = await reader.readuntil(b"\r\n\r\n")
    lines = head.decode("latin-1").split("\r\n")
    path = lines[0].split(" ")[1] if len(lines[0].split(" ")) > 1 else "/"
    key = None
    for line in lines[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "sec-websocket-key":
            key = value.strip()
    if key is None:
        raise WsError("missing Sec-WebSocket-Key")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n"
    )
    writer.write(response.encode("latin-1"))
    await writer.drain()
    return path
