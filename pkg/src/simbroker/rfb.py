"""RFB (remote framebuffer) protocol 3.8 subset: codec, transports, client.

Wire format per the protocol: big-endian integers throughout. Client message
types 0/2/3/4/5 (SetPixelFormat, SetEncodings, FramebufferUpdateRequest,
KeyEvent, PointerEvent) and server types 0/2/3 (FramebufferUpdate, Bell,
ServerCutText); Raw encoding only, 32-bpp true-color pixels. Security type
None only — transport encryption is the gateway's TLS termination, the same
way noVNC wraps VNC in TLS WebSockets.

The client also speaks RFB inside binary WebSocket frames (the noVNC path),
so the latency harness can measure through the gateway.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import Optional, Union

from .websocket import WsSocket

__all__ = [
    "PROTOCOL_VERSION",
    "SECURITY_NONE",
    "ENCODING_RAW",
    "BYTES_PER_PIXEL",
    "RfbError",
    "TruncatedMessage",
    "UnknownMessageType",
    "UnsupportedEncoding",
    "VersionMismatch",
    "SecurityRefused",
    "PixelFormat",
    "SetPixelFormat",
    "SetEncodings",
    "FramebufferUpdateRequest",
    "KeyEvent",
    "PointerEvent",
    "Rectangle",
    "FramebufferUpdate",
    "Bell",
    "ServerCutText",
    "encode_client",
    "decode_client",
    "encode_server",
    "decode_server",
    "Handshake",
    "client_handshake",
    "TcpTransport",
    "WsTransport",
    "connect_endpoint",
]

PROTOCOL_VERSION = b"RFB 003.008\n"  # exactly 12 bytes
SECURITY_NONE = 1
ENCODING_RAW = 0
BYTES_PER_PIXEL = 4

_PIXEL_FORMAT = struct.Struct(">BBBBHHHBBB3x")
_SERVER_INIT = struct.Struct(">HH")
_U32 = struct.Struct(">I")


class RfbError(Exception):
    pass


class TruncatedMessage(RfbError):
    """The buffer ends before the message does."""


class UnknownMessageType(RfbError):
    pass


class UnsupportedEncoding(RfbError):
    pass


class VersionMismatch(RfbError):
    pass


class SecurityRefused(RfbError):
    pass


@dataclass(frozen=True)
class PixelFormat:
    bits_per_pixel: int = 32
    depth: int = 24
    big_endian: bool = False
    true_colour: bool = True
    red_max: int = 255
    green_max: int = 255
    blue_max: int = 255
    red_shift: int = 16
    green_shift: int = 8
    blue_shift: int = 0

    def pack(self) -> bytes:
        return _PIXEL_FORMAT.pack(
            self.bits_per_pixel,
            self.depth,
            int(self.big_endian),
            int(self.true_colour),
            self.red_max,
            self.green_max,
            self.blue_max,
            self.red_shift,
            self.green_shift,
            self.blue_shift,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "PixelFormat":
        fields = _PIXEL_FORMAT.unpack(data)
        return cls(
            bits_per_pixel=fields[0],
            depth=fields[1],
            big_endian=bool(fields[2]),
            true_colour=bool(fields[3]),
            red_max=fields[4],
            green_max=fields[5],
            blue_max=fields[6],
            red_shift=fields[7],
            green_shift=fields[8],
            blue_shift=fields[9],
        )


# -- client messages --------------------------------------------------------


@dataclass(frozen=True)
class SetPixelFormat:
    pixel_format: PixelFormat = PixelFormat()


@dataclass(frozen=True)
class SetEncodings:
    encodings: tuple[int, ...] = (ENCODING_RAW,)


@dataclass(frozen=True)
class FramebufferUpdateRequest:
    incremental: bool
    x: int
    y: int
    width: int
    height: int


@dataclass(frozen=True)
class KeyEvent:
    down: bool
    keysym: int


@dataclass(frozen=True)
class PointerEvent:
    button_mask: int
    x: int
    y: int


ClientMessage = Union[SetPixelFormat, SetEncodings, FramebufferUpdateRequest, KeyEvent, PointerEvent]


# -- server messages ----------------------------------------------------------


@dataclass(frozen=True)
class Rectangle:
    x: int
    y: int
    width: int
    height: int
    encoding: int = ENCODING_RAW
    payload: bytes = b""


@dataclass(frozen=True)
class FramebufferUpdate:
    rectangles: tuple[Rectangle, ...]

    def __post_init__(self) -> None:
        if not self.rectangles:
            raise ValueError("FramebufferUpdate requires at least one rectangle")


@dataclass(frozen=True)
class Bell:
    pass


@dataclass(frozen=True)
class ServerCutText:
    text: str


ServerMessage = Union[FramebufferUpdate, Bell, ServerCutText]


def encode_client(msg: ClientMessage) -> bytes:
    if isinstance(msg, SetPixelFormat):
        return b"\x00\x00\x00\x00" + msg.pixel_format.pack()
    if isinstance(msg, SetEncodings):
        return (
            b"\x02\x00"
            + struct.pack(">H", len(msg.encodings))
            + b"".join(struct.pack(">i", e) for e in msg.encodings)
        )
    if isinstance(msg, FramebufferUpdateRequest):
        return struct.pack(
            ">BBHHHH", 3, int(msg.incremental), msg.x, msg.y, msg.width, msg.height
        )
    if isinstance(msg, KeyEvent):
        return struct.pack(">BBxxI", 4, int(msg.down), msg.keysym)
    if isinstance(msg, PointerEvent):
        return struct.pack(">BBHH", 5, msg.button_mask, msg.x, msg.y)
    raise TypeError(f"not a client message: {msg!r}")


def decode_client(buf: bytes) -> tuple[ClientMessage, int]:
    """Decode one client message from the head of ``buf``.

    Returns (message, bytes consumed). Raises TruncatedMessage when the buffer
    holds only part of a message.
    """
    if not buf:
        raise TruncatedMessage
    mtype = buf[0]
    if mtype == 0:
        _need(buf, 20)
        return SetPixelFormat(PixelFormat.unpack(buf[4:20])), 20
    if mtype == 2:
        _need(buf, 4)
        (count,) = struct.unpack_from(">H", buf, 2)
        total = 4 + 4 * count
        _need(buf, total)
        encodings = struct.unpack_from(f">{count}i", buf, 4) if count else ()
        return SetEncodings(tuple(encodings)), total
    if mtype == 3:
        _need(buf, 10)
        _, inc, x, y, w, h = struct.unpack_from(">BBHHHH", buf)
        return FramebufferUpdateRequest(bool(inc), x, y, w, h), 10
    if mtype == 4:
        _need(buf, 8)
        _, down, keysym = struct.unpack_from(">BBxxI", buf)
        return KeyEvent(bool(down), keysym), 8
    if mtype == 5:
        _need(buf, 6)
        _, mask, x, y = struct.unpack_from(">BBHH", buf)
        return PointerEvent(mask, x, y), 6
    raise UnknownMessageType(f"client message type {mtype}")


def encode_server(msg: ServerMessage) -> bytes:
    if isinstance(msg, FramebufferUpdate):
        out = [struct.pack(">BxH", 0, len(msg.rectangles))]
        for r in msg.rectangles:
            if r.encoding != ENCODING_RAW:
                raise UnsupportedEncoding(f"encoding {r.encoding}")
            expected = r.width * r.height * BYTES_PER_PIXEL
            if len(r.payload) != expected:
                raise ValueError(
                    f"raw rectangle payload must be {expected} bytes, got {len(r.payload)}"
                )
            out.append(struct.pack(">HHHHi", r.x, r.y, r.width, r.height, r.encoding))
            out.append(r.payload)
        return b"".join(out)
    if isinstance(msg, Bell):
        return b"\x02"
    if isinstance(msg, ServerCutText):
        text = msg.text.encode("latin-1")
        return struct.pack(">BxxxI", 3, len(text)) + text
    raise TypeError(f"not a server message: {msg!r}")


def decode_server(buf: bytes, bytes_per_pixel: int = BYTES_PER_PIXEL) -> tuple[ServerMessage, int]:
    if not buf:
        raise TruncatedMessage
    mtype = buf[0]
    if mtype == 0:
        _need(buf, 4)
        (count,) = struct.unpack_from(">H", buf, 2)
        pos = 4
        rects = []
        for _ in range(count):
            _need(buf, pos + 12)
            x, y, w, h, encoding = struct.unpack_from(">HHHHi", buf, pos)
            pos += 12
            if encoding != ENCODING_RAW:
                raise UnsupportedEncoding(f"encoding {encoding}")
            size = w * h * bytes_per_pixel
            _need(buf, pos + size)
            rects.append(Rectangle(x, y, w, h, encoding, bytes(buf[pos : pos + size])))
            pos += size
        return FramebufferUpdate(tuple(rects)), pos
    if mtype == 2:
        return Bell(), 1
    if mtype == 3:
        _need(buf, 8)
        (length,) = struct.unpack_from(">I", buf, 4)
        _need(buf, 8 + length)
        return ServerCutText(buf[8 : 8 + length].decode("latin-1")), 8 + length
    raise UnknownMessageType(f"server message type {mtype}")


def _need(buf: bytes, size: int) -> None:
    if len(buf) < size:
        raise TruncatedMessage


# -- transports -----------------------------------------------------------


class TcpTransport:
    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "TcpTransport":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def settimeout(self, timeout: Optional[float]) -> None:
        self._sock.settimeout(timeout)

    def read_exact(self, size: int) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            chunk = self._sock.recv(remaining)
            if not chunk:
                raise ConnectionError("connection closed")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def read_some(self, limit: int = 65536) -> bytes:
        chunk = self._sock.recv(limit)
        if not chunk:
            raise ConnectionError("connection closed")
        return chunk

    def write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        self._sock.close()


class WsTransport:
    """RFB inside binary WebSocket frames (the noVNC path)."""

    def __init__(self, ws: WsSocket):
        self._ws = ws
        self._buf = b""

    @classmethod
    def connect(
        cls,
        url: str,
        timeout: float = 10.0,
        connect_addr: Optional[tuple[str, int]] = None,
        host_header: Optional[str] = None,
    ) -> "WsTransport":
        return cls(WsSocket.connect(url, timeout, connect_addr, host_header))

    def settimeout(self, timeout: Optional[float]) -> None:
        self._ws.settimeout(timeout)

    def read_exact(self, size: int) -> bytes:
        while len(self._buf) < size:
            _, payload = self._ws.recv_message()
            self._buf += payload
        out, self._buf = self._buf[:size], self._buf[size:]
        return out

    def read_some(self, limit: int = 65536) -> bytes:
        if not self._buf:
            _, payload = self._ws.recv_message()
            self._buf = payload
        out, self._buf = self._buf[:limit], self._buf[limit:]
        return out

    def write(self, data: bytes) -> None:
        self._ws.send_binary(data)

    def close(self) -> None:
        self._ws.close()


def connect_endpoint(
    endpoint,
    timeout: float = 10.0,
    connect_addr: Optional[tuple[str, int]] = None,
    host_header: Optional[str] = None,
):
    """(host, port) tuple -> TCP transport; ws:// URL -> WebSocket transport."""
    if isinstance(endpoint, str):
        return WsTransport.connect(endpoint, timeout, connect_addr, host_header)
    host, port = endpoint
    return TcpTransport.connect(host, port, timeout)


# -- handshake ----------------------------------------------------------------


@dataclass(frozen=True)
class Handshake:
    width: int
    height: int
    pixel_format: PixelFormat
    name: str


def client_handshake(transport) -> Handshake:
    """Version/security/init exchange: version 3.8, security None, shared."""
    server_version = transport.read_exact(12)
    if not server_version.startswith(b"RFB 003."):
        raise VersionMismatch(repr(server_version))
    transport.write(PROTOCOL_VERSION)
    (count,) = transport.read_exact(1)
    if count == 0:
        (reason_len,) = _U32.unpack(transport.read_exact(4))
        reason = transport.read_exact(reason_len).decode("latin-1", "replace")
        raise SecurityRefused(reason or "server refused connection")
    types = transport.read_exact(count)
    if SECURITY_NONE not in types:
        raise SecurityRefused(f"server offers {list(types)}, need None")
    transport.write(bytes([SECURITY_NONE]))
    (result,) = _U32.unpack(transport.read_exact(4))
    if result != 0:
        raise SecurityRefused(f"security result {result}")
    transport.write(b"\x01")  # ClientInit: shared
    width, height = _SERVER_INIT.unpack(transport.read_exact(4))
    pixel_format = PixelFormat.unpack(transport.read_exact(16))
    (name_len,) = _U32.unpack(transport.read_exact(4))
    name = transport.read_exact(name_len).decode("utf-8", "replace")
    transport.write(encode_client(SetEncodings((ENCODING_RAW,))))
    return Handshake(width, height, pixel_format, name)
