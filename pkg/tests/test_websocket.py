"""WebSocket frame codec and handshake key derivation."""

import pytest
from hypothesis import given, strategies as st

from simbroker.websocket import (
    OP_BINARY,
    OP_TEXT,
    IncompleteFrame,
    accept_key,
    decode_frame,
    encode_frame,
)


def test_accept_key_rfc_vector():
    assert accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="


@given(st.binary(max_size=300), st.booleans())
def test_frame_roundtrip(payload, mask):
    frame = encode_frame(payload, OP_BINARY, mask=mask)
    opcode, decoded, fin, used = decode_frame(frame)
    assert opcode == OP_BINARY
    assert decoded == payload
    assert fin is True
    assert used == len(frame)


@pytest.mark.parametrize("size", [0, 125, 126, 127, 65535, 65536, 70000])
def test_length_encodings(size):
    payload = bytes(size)
    frame = encode_frame(payload, OP_TEXT, mask=True)
    opcode, decoded, _, used = decode_frame(frame)
    assert opcode == OP_TEXT
    assert decoded == payload
    assert used == len(frame)


def test_incomplete_frame():
    frame = encode_frame(b"hello world", mask=True)
    for cut in range(len(frame)):
        with pytest.raises(IncompleteFrame):
            decode_frame(frame[:cut])


def test_concatenated_frames_decode_in_order():
    frames = [encode_frame(bytes([i]) * i, mask=False) for i in range(1, 6)]
    buf = b"".join(frames)
    seen = []
    while buf:
        _, payload, _, used = decode_frame(buf)
        seen.append(payload)
        buf = buf[used:]
    assert seen == [bytes([i]) * i for i in range(1, 6)]
