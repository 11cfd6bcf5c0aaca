import struct
import zlib

import pytest
from hypothesis import given, settings, strategies as st

from cloakkey.errors import CrcMismatch, MalformedFrame, ProtocolTimeout, UnsupportedVersion
from cloakkey.wire import (MIN_FRAME, Frame, FrameStream, Kind, decode_frame, encode_frame,
                           loopback_pair, split_frames)


def _recrc(body: bytes) -> bytes:
    return body + struct.pack(">I", zlib.crc32(body))


def test_ack_golden_bytes():
    raw = encode_frame(Frame(Kind.ACK, 1, 0, b""))
    assert len(raw) == MIN_FRAME == 22
    assert raw.hex() == "4b4254530104000000010000000000000000607aac7b"


frames = st.builds(Frame, st.sampled_from(list(Kind)), st.integers(0, 2**32 - 1),
                   st.integers(0, 2**32 - 1), st.binary(max_size=512))


@settings(max_examples=200, deadline=None)
@given(frames)
def test_round_trip(frame):
    raw = encode_frame(frame)
    assert len(raw) == 22 + len(frame.payload)
    assert decode_frame(raw) == frame


@settings(max_examples=200, deadline=None)
@given(frames, st.data())
def test_any_single_bit_flip_is_crc_mismatch(frame, data):
    raw = bytearray(encode_frame(frame))
    pos = data.draw(st.integers(0, 8 * len(raw) - 1))
    raw[pos // 8] ^= 1 << (pos % 8)
    with pytest.raises(CrcMismatch):
        decode_frame(bytes(raw))


def test_field_errors_with_valid_crc():
    body = encode_frame(Frame(Kind.HELLO, 3, 0, b"abc"))[:-4]
    with pytest.raises(MalformedFrame, match="magic"):
        decode_frame(_recrc(b"XXXX" + body[4:]))
    with pytest.raises(UnsupportedVersion):
        decode_frame(_recrc(body[:4] + b"\x02" + body[5:]))
    with pytest.raises(MalformedFrame, match="kind"):
        decode_frame(_recrc(body[:5] + b"\x09" + body[6:]))
    with pytest.raises(MalformedFrame, match="payload_len"):
        decode_frame(_recrc(body[:14] + struct.pack(">I", 4) + body[18:]))
    with pytest.raises(MalformedFrame):
        decode_frame(b"\x00" * 21)


def test_split_frames():
    fs = [Frame(Kind.HELLO, 1, 0, b"x" * 32), Frame(Kind.BATCH, 1, 1, b"\x00" * 10),
          Frame(Kind.ACK, 1, 2, b"")]
    raw = b"".join(encode_frame(f) for f in fs)
    assert list(split_frames(raw)) == fs
    with pytest.raises(MalformedFrame):
        list(split_frames(raw[:-1]))
    with pytest.raises(MalformedFrame):
        list(split_frames(raw + b"\x00" * 5))


def test_stream_over_loopback_records_both_directions():
    a, b = loopback_pair(timeout=5)
    rec_a, rec_b = [], []
    sa, sb = FrameStream(a, rec_a), FrameStream(b, rec_b)
    sa.send(Frame(Kind.HELLO, 1, 0, b"h"))
    assert sb.recv() == Frame(Kind.HELLO, 1, 0, b"h")
    sb.send(Frame(Kind.ACK, 1, 1, b"k"))
    assert sa.recv().payload == b"k"
    assert sa.transcript() == sb.transcript()
    assert len(rec_a) == 2
    a.close(), b.close()


def test_timeout_and_eof():
    a, b = loopback_pair(timeout=0.2)
    with pytest.raises(ProtocolTimeout):
        FrameStream(b).recv()
    a.close()
    with pytest.raises(MalformedFrame):
        FrameStream(b).recv()
    b.close()
