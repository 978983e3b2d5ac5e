"""RFB codec roundtrips, wire layout, handshake, and fixture pacing."""

import socket
import struct
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from simbroker import rfb
from simbroker.rfb_fixture import RfbFixture, ServerFixtureConfig

# -- strategies ---------------------------------------------------------------

u8 = st.integers(0, 255)
u16 = st.integers(0, 65535)
u32 = st.integers(0, 2**32 - 1)

client_messages = st.one_of(
    st.builds(rfb.SetPixelFormat),
    st.builds(rfb.SetEncodings, st.lists(st.integers(-(2**31), 2**31 - 1), max_size=8).map(tuple)),
    st.builds(rfb.FramebufferUpdateRequest, st.booleans(), u16, u16, u16, u16),
    st.builds(rfb.KeyEvent, st.booleans(), u32),
    st.builds(rfb.PointerEvent, u8, u16, u16),
)


@st.composite
def raw_rectangles(draw):
    w = draw(st.integers(0, 8))
    h = draw(st.integers(0, 8))
    x = draw(st.integers(0, 100))
    y = draw(st.integers(0, 100))
    payload = draw(st.binary(min_size=w * h * 4, max_size=w * h * 4))
    return rfb.Rectangle(x, y, w, h, rfb.ENCODING_RAW, payload)


server_messages = st.one_of(
    st.builds(
        rfb.FramebufferUpdate,
        st.lists(raw_rectangles(), min_size=1, max_size=4).map(tuple),
    ),
    st.builds(rfb.Bell),
    st.builds(rfb.ServerCutText, st.text(alphabet=st.characters(max_codepoint=255), max_size=40)),
)


# -- codec ----------------------------------------------------------------


def test_framebuffer_update_request_wire_layout():
    # hand-derived layout: type 03, incremental 01, x/y 0000 0000, w 0280, h 01E0
    msg = rfb.FramebufferUpdateRequest(True, 0, 0, 640, 480)
    assert rfb.encode_client(msg) == bytes.fromhex("030100000000028001e0")


def test_key_event_wire_layout():
    assert rfb.encode_client(rfb.KeyEvent(True, 0xFF0D)) == bytes.fromhex("04010000" + "0000ff0d")


@settings(max_examples=500)
@given(client_messages)
def test_client_roundtrip(msg):
    encoded = rfb.encode_client(msg)
    decoded, used = rfb.decode_client(encoded)
    assert decoded == msg
    assert used == len(encoded)


@settings(max_examples=500)
@given(server_messages)
def test_server_roundtrip(msg):
    encoded = rfb.encode_server(msg)
    decoded, used = rfb.decode_server(encoded)
    assert decoded == msg
    assert used == len(encoded)


@given(st.lists(client_messages, min_size=1, max_size=10))
def test_framing_concatenation(messages):
    buf = b"".join(rfb.encode_client(m) for m in messages)
    out = []
    while buf:
        msg, used = rfb.decode_client(buf)
        out.append(msg)
        buf = buf[used:]
    assert out == list(messages)


def test_truncated_pointer_event():
    with pytest.raises(rfb.TruncatedMessage):
        rfb.decode_client(bytes.fromhex("0501"))


def test_unknown_message_types():
    with pytest.raises(rfb.UnknownMessageType):
        rfb.decode_client(b"\x09")
    with pytest.raises(rfb.UnknownMessageType):
        rfb.decode_server(b"\x7f")


def test_unsupported_encoding_rejected():
    # a rectangle claiming ZRLE (16)
    blob = struct.pack(">BxH", 0, 1) + struct.pack(">HHHHi", 0, 0, 1, 1, 16)
    with pytest.raises(rfb.UnsupportedEncoding):
        rfb.decode_server(blob)


def test_version_string_is_12_bytes():
    assert len(rfb.PROTOCOL_VERSION) == 12
    assert rfb.PROTOCOL_VERSION == b"RFB 003.008\n"


# -- handshake ----------------------------------------------------------------


def canned_server(script):
    """One-shot TCP server sending ``script`` then holding the socket open."""
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]

    def run():
        conn, _ = listener.accept()
        conn.sendall(script)
        time.sleep(0.5)
        conn.close()
        listener.close()

    threading.Thread(target=run, daemon=True).start()
    return port


def test_handshake_against_fixture():
    with RfbFixture(ServerFixtureConfig(width=640, height=480, name="fixture")) as fx:
        transport = rfb.TcpTransport.connect("127.0.0.1", fx.port)
        hs = rfb.client_handshake(transport)
        transport.close()
    assert (hs.width, hs.height, hs.name) == (640, 480, "fixture")
    assert hs.pixel_format.bits_per_pixel == 32
    assert hs.pixel_format.true_colour


def test_handshake_vnc_auth_only_refused():
    port = canned_server(rfb.PROTOCOL_VERSION + bytes([1, 2]))  # offers VNC auth only
    transport = rfb.TcpTransport.connect("127.0.0.1", port)
    with pytest.raises(rfb.SecurityRefused):
        rfb.client_handshake(transport)
    transport.close()


def test_handshake_garbage_version():
    port = canned_server(b"HTTP/1.1 400 \n")
    transport = rfb.TcpTransport.connect("127.0.0.1", port)
    with pytest.raises(rfb.VersionMismatch):
        rfb.client_handshake(transport)
    transport.close()


# -- fixture pacing -------------------------------------------------------------


def recv_update(transport, timeout=2.0):
    transport.settimeout(timeout)
    buf = b""
    while True:
        try:
            msg, used = rfb.decode_server(buf)
        except rfb.TruncatedMessage:
            buf += transport.read_some()
            continue
        if isinstance(msg, rfb.FramebufferUpdate):
            return msg
        buf = buf[used:]


def expect_silence(transport, seconds):
    transport.settimeout(seconds)
    try:
        transport.read_some()
    except (TimeoutError, socket.timeout):
        return True
    return False


def request(transport, incremental=True):
    transport.write(rfb.encode_client(rfb.FramebufferUpdateRequest(incremental, 0, 0, 640, 480)))


def test_fixture_client_paced_no_request_no_update():
    with RfbFixture(ServerFixtureConfig(response_delay=10.0)) as fx:
        transport = rfb.TcpTransport.connect("127.0.0.1", fx.port)
        rfb.client_handshake(transport)
        transport.write(rfb.encode_client(rfb.KeyEvent(True, 0x20)))
        assert expect_silence(transport, 0.25)  # dirty but unrequested: nothing sent
        request(transport)
        update = recv_update(transport)
        assert update.rectangles[0].width == 16
        transport.close()


def test_fixture_incremental_without_events_stays_silent():
    with RfbFixture(ServerFixtureConfig(response_delay=0.0)) as fx:
        transport = rfb.TcpTransport.connect("127.0.0.1", fx.port)
        rfb.client_handshake(transport)
        request(transport)
        assert expect_silence(transport, 0.25)
        transport.close()


def test_fixture_nonincremental_refresh_is_immediate():
    with RfbFixture(ServerFixtureConfig(response_delay=500.0, width=32, height=16)) as fx:
        transport = rfb.TcpTransport.connect("127.0.0.1", fx.port)
        rfb.client_handshake(transport)
        request(transport, incremental=False)
        t0 = time.monotonic()
        update = recv_update(transport)
        assert time.monotonic() - t0 < 0.3
        rect = update.rectangles[0]
        assert (rect.width, rect.height) == (32, 16)
        transport.close()


def test_fixture_fixed_delay_timing():
    delay_ms = 80.0
    with RfbFixture(ServerFixtureConfig(response_delay=delay_ms)) as fx:
        transport = rfb.TcpTransport.connect("127.0.0.1", fx.port)
        rfb.client_handshake(transport)
        request(transport)
        t0 = time.monotonic()
        transport.write(rfb.encode_client(rfb.PointerEvent(1, 10, 10)))
        recv_update(transport)
        elapsed_ms = (time.monotonic() - t0) * 1000
        assert delay_ms - 1 <= elapsed_ms <= delay_ms + 60
        transport.close()


def test_fixture_per_sample_delays_consumed_in_order():
    delays = [120.0, 60.0, 0.0]
    with RfbFixture(ServerFixtureConfig(response_delay=delays)) as fx:
        transport = rfb.TcpTransport.connect("127.0.0.1", fx.port)
        rfb.client_handshake(transport)
        timings = []
        for d in delays:
            request(transport)
            t0 = time.monotonic()
            transport.write(rfb.encode_client(rfb.KeyEvent(True, 0x61)))
            recv_update(transport)
            timings.append((time.monotonic() - t0) * 1000)
        transport.close()
    for measured, configured in zip(timings, delays):
        assert configured - 1 <= measured <= configured + 60


def test_fixture_never_marks_dirty():
    with RfbFixture(ServerFixtureConfig(dirty_rect=None)) as fx:
        transport = rfb.TcpTransport.connect("127.0.0.1", fx.port)
        rfb.client_handshake(transport)
        request(transport)
        transport.write(rfb.encode_client(rfb.KeyEvent(True, 0x61)))
        assert expect_silence(transport, 0.3)
        transport.close()


def test_fixture_over_websocket():
    with RfbFixture(ServerFixtureConfig(response_delay=5.0), ws=True) as fx:
        transport = rfb.WsTransport.connect(f"ws://127.0.0.1:{fx.port}/")
        hs = rfb.client_handshake(transport)
        assert hs.name == "fixture"
        request(transport)
        transport.write(rfb.encode_client(rfb.PointerEvent(0, 1, 2)))
        update = recv_update(transport)
        assert update.rectangles[0].payload == bytes([0x2A]) * (16 * 16 * 4)
        transport.close()
