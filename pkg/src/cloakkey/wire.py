"""Framed wire protocol and byte-stream transports.

Frame layout (18-byte header, payload, CRC trailer; integers big-endian):

+-------+---------+------+-------+-----+-------------+---------+-------+
| magic | version | kind | round | seq | payload_len | payload | crc32 |
|   4   |    1    |  1   |   4   |  4  |      4      |    n    |   4   |
+-------+---------+------+-------+-----+-------------+---------+-------+

The CRC (IEEE, ``zlib.crc32``) covers every preceding byte. Decoding checks
the overall length and the CRC before any field, so a corrupted frame is
reported as ``CrcMismatch`` rather than as whatever field the damage hit.
"""

from __future__ import annotations

import socket
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator, Protocol

from .errors import (CrcMismatch, MalformedFrame, ProtocolError, ProtocolTimeout,
                     UnsupportedVersion)

MAGIC = b"KBTS"
VERSION = 1
HEADER = struct.Struct(">4sBBIII")
HEADER_SIZE = HEADER.size  # 18
CRC_SIZE = 4
MIN_FRAME = HEADER_SIZE + CRC_SIZE
MAX_PAYLOAD = 1 << 24
DEFAULT_TIMEOUT = 30.0


class Kind(IntEnum):
    HELLO = 1
    BATCH = 2
    PA_PARAMS = 3
    ACK = 4
    ERROR = 5


@dataclass(frozen=True)
class Frame:
    kind: Kind
    round: int
    seq: int
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise MalformedFrame(f"payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}")
    head = HEADER.pack(MAGIC, VERSION, int(frame.kind), frame.round, frame.seq, len(frame.payload))
    body = head + frame.payload
    return body + struct.pack(">I", zlib.crc32(body))


def decode_frame(data: bytes) -> Frame:
    if len(data) < MIN_FRAME:
        raise MalformedFrame(f"frame of {len(data)} bytes is shorter than {MIN_FRAME}")
    (crc,) = struct.unpack_from(">I", data, len(data) - CRC_SIZE)
    if zlib.crc32(memoryview(data)[:-CRC_SIZE]) != crc:
        raise CrcMismatch("frame CRC does not verify")
    magic, version, kind, rnd, seq, plen = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"frame version {version}, expected {VERSION}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise MalformedFrame(f"unknown frame kind {kind}") from None
    if plen != len(data) - MIN_FRAME:
        raise MalformedFrame(f"payload_len {plen} disagrees with {len(data) - MIN_FRAME} bytes present")
    return Frame(kind, rnd, seq, bytes(data[HEADER_SIZE:-CRC_SIZE]))


def split_frames(data: bytes) -> Iterator[Frame]:
    """Decode a raw concatenation of frames (a tap transcript file)."""
    pos = 0
    while pos < len(data):
        if len(data) - pos < MIN_FRAME:
            raise MalformedFrame("trailing bytes do not form a frame")
        *_, plen = HEADER.unpack_from(data, pos)
        end = pos + MIN_FRAME + plen
        if end > len(data):
            raise MalformedFrame("transcript ends inside a frame")
        yield decode_frame(data[pos:end])
        pos = end


# --- transports -----------------------------------------------------------

class Transport(Protocol):
    def send(self, data: bytes) -> None: ...
    def recv_exact(self, n: int) -> bytes: ...
    def close(self) -> None: ...


class SocketTransport:
    """Ordered reliable byte stream over a connected socket."""

    def __init__(self, sock: socket.socket, timeout: float | None = DEFAULT_TIMEOUT) -> None:
        self.sock = sock
        sock.settimeout(timeout)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except socket.timeout as exc:
            raise ProtocolTimeout("send timed out") from exc
        except OSError as exc:
            raise ProtocolError(f"send failed: {exc}") from exc

    def recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            except socket.timeout as exc:
                raise ProtocolTimeout(f"no data within {self.sock.gettimeout()} s") from exc
            except OSError as exc:
                raise ProtocolError(f"receive failed: {exc}") from exc
            if not chunk:
                raise MalformedFrame("peer closed the connection mid-stream")
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        self.sock.close()


def loopback_pair(timeout: float | None = DEFAULT_TIMEOUT) -> tuple[SocketTransport, SocketTransport]:
    a, b = socket.socketpair()
    return SocketTransport(a, timeout), SocketTransport(b, timeout)


def connect_tcp(host: str, port: int, timeout: float | None = DEFAULT_TIMEOUT) -> SocketTransport:
    sock = socket.create_connection((host, port), timeout=timeout)
    return SocketTransport(sock, timeout)


class FrameStream:
    """Frame-level reads and writes on a transport, optionally recording both directions."""

    def __init__(self, transport: Transport, record: list[bytes] | None = None) -> None:
        self.transport = transport
        self.record = record

    def send(self, frame: Frame) -> None:
        raw = encode_frame(frame)
        if self.record is not None:
            self.record.append(raw)
        self.transport.send(raw)

    def recv(self) -> Frame:
        head = self.transport.recv_exact(HEADER_SIZE)
        magic, *_, plen = HEADER.unpack(head)
        if magic != MAGIC:
            raise MalformedFrame(f"bad magic {magic!r}")
        if plen > MAX_PAYLOAD:
            raise MalformedFrame(f"payload_len {plen} exceeds {MAX_PAYLOAD}")
        raw = head + self.transport.recv_exact(plen + CRC_SIZE)
        frame = decode_frame(raw)
        if self.record is not None:
            self.record.append(raw)
        return frame

    def transcript(self) -> bytes:
        return b"".join(self.record or ())
