"""One-time pad primitives and the decentralized key-matrix scheme.

A group of users holding the same key bits arranges them as a ``d x d``
matrix. To send a message a user XORs a random choice of matrix lines into
a pad and publishes the (1-based) line numbers next to the ciphertext.

Envelopes carry no integrity protection: a corrupted index list or
ciphertext silently decrypts to the wrong plaintext.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import bits as bitops
from .errors import FormatError

DEFAULT_LINE_COUNT = 20

ENVELOPE_MAGIC = b"KBEV"
ENVELOPE_VERSION = 1
_ENV_HEAD = struct.Struct(">4sBIH")
_ENV_LEN = struct.Struct(">Q")

# Above this many users the birthday product is evaluated in log space.
_EXACT_RATIONAL_MAX_N = 2000


def xor_bits(x, y) -> np.ndarray:
    xa, ya = bitops.as_bits(x), bitops.as_bits(y)
    if xa.shape != ya.shape:
        raise ValueError(f"length mismatch: {xa.size} vs {ya.size}")
    return xa ^ ya


@dataclass
class KeyMatrix:
    d: int
    bits: np.ndarray
    remainder: int = 0
    consumed_lines: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.bits = bitops.as_bits(self.bits)
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.bits.size != self.d * self.d:
            raise ValueError(f"key matrix needs d*d = {self.d * self.d} bits")

    @property
    def rows(self) -> np.ndarray:
        return self.bits.reshape(self.d, self.d)

    def line(self, index: int) -> np.ndarray:
        """Line ``index``, numbered 1..d from the top."""
        if not 1 <= index <= self.d:
            raise ValueError(f"line index {index} outside [1, {self.d}]")
        return self.rows[index - 1]

    def pad(self, indices: Iterable[int]) -> np.ndarray:
        idx = [int(i) for i in indices]
        for i in idx:
            if not 1 <= i <= self.d:
                raise ValueError(f"line index {i} outside [1, {self.d}]")
        if not idx:
            return np.zeros(self.d, dtype=np.uint8)
        return np.bitwise_xor.reduce(self.rows[np.array(idx) - 1], axis=0)

    @property
    def refresh_needed(self) -> bool:
        """True once every line has been used at least once."""
        return len(self.consumed_lines) >= self.d


def build_key_matrix(key_bits) -> KeyMatrix:
    """Square matrix from the first ``d*d`` bits, ``d = isqrt(len)``."""
    bits = bitops.as_bits(key_bits)
    if bits.size < 4:
        raise ValueError("a key matrix needs at least 4 bits")
    d = math.isqrt(bits.size)
    return KeyMatrix(d=d, bits=bits[:d * d].copy(), remainder=int(bits.size - d * d))


@dataclass(frozen=True)
class CipherEnvelope:
    line_indices: tuple[int, ...]
    ciphertext: np.ndarray
    bit_length: int

    def __post_init__(self) -> None:
        if len(set(self.line_indices)) != len(self.line_indices):
            raise ValueError("line indices must be distinct")
        if not 0 <= self.bit_length <= self.ciphertext.size:
            raise ValueError("bit_length exceeds the ciphertext")

    @property
    def d(self) -> int:
        return int(self.ciphertext.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CipherEnvelope):
            return NotImplemented
        return (self.line_indices == other.line_indices and self.bit_length == other.bit_length
                and np.array_equal(self.ciphertext, other.ciphertext))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))


def choose_lines(d: int, line_count: int, rng: np.random.Generator) -> tuple[int, ...]:
    if not 0 <= line_count <= d:
        raise ValueError(f"cannot choose {line_count} distinct lines out of {d}")
    picks = rng.choice(d, size=line_count, replace=False) + 1
    return tuple(int(i) for i in np.sort(picks))


def encrypt_decentralized(matrix: KeyMatrix, message, line_count: int = DEFAULT_LINE_COUNT,
                          seed=0) -> CipherEnvelope:
    """Encrypt one ``d``-bit block with the XOR of ``line_count`` random lines."""
    msg = bitops.as_bits(message)
    if msg.size != matrix.d:
        raise ValueError(f"message must be exactly d = {matrix.d} bits, got {msg.size}")
    indices = choose_lines(matrix.d, line_count, _rng(seed))
    matrix.consumed_lines.update(indices)
    return CipherEnvelope(indices, matrix.pad(indices) ^ msg, matrix.d)


def decrypt_decentralized(matrix: KeyMatrix, envelope: CipherEnvelope) -> np.ndarray:
    if envelope.d != matrix.d:
        raise ValueError(f"ciphertext is {envelope.d} bits, matrix lines are {matrix.d}")
    plain = matrix.pad(envelope.line_indices) ^ envelope.ciphertext
    return plain[:envelope.bit_length]


def encrypt_message(matrix: KeyMatrix, message, line_count: int = DEFAULT_LINE_COUNT,
                    seed=0) -> list[CipherEnvelope]:
    """Chunk into ``d``-bit blocks, each with its own line draw; last block zero-padded."""
    msg = bitops.as_bits(message)
    rng = _rng(seed)
    out = []
    for start in range(0, max(msg.size, 1), matrix.d):
        block = msg[start:start + matrix.d]
        padded = np.zeros(matrix.d, dtype=np.uint8)
        padded[:block.size] = block
        env = encrypt_decentralized(matrix, padded, line_count, rng)
        out.append(CipherEnvelope(env.line_indices, env.ciphertext, int(block.size)))
    return out


def decrypt_message(matrix: KeyMatrix, envelopes: Sequence[CipherEnvelope]) -> np.ndarray:
    parts = [decrypt_decentralized(matrix, e) for e in envelopes]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)


# --- envelope files ---------------------------------------------------------

def encode_envelope(env: CipherEnvelope) -> bytes:
    idx = sorted(env.line_indices)
    body = (_ENV_HEAD.pack(ENVELOPE_MAGIC, ENVELOPE_VERSION, env.d, len(idx))
            + struct.pack(f">{len(idx)}I", *idx)
            + _ENV_LEN.pack(env.bit_length)
            + bitops.pack(env.ciphertext))
    return body + struct.pack(">I", zlib.crc32(body))


def decode_envelope(data: bytes, offset: int = 0) -> tuple[CipherEnvelope, int]:
    """Parse one envelope at ``offset``; returns it and the offset just past it."""
    view = memoryview(data)
    if len(data) - offset < _ENV_HEAD.size:
        raise FormatError("truncated envelope header")
    magic, version, d, count = _ENV_HEAD.unpack_from(view, offset)
    if magic != ENVELOPE_MAGIC:
        raise FormatError(f"bad envelope magic {magic!r}")
    if version != ENVELOPE_VERSION:
        raise FormatError(f"unsupported envelope version {version}")
    pos = offset + _ENV_HEAD.size
    end = pos + 4 * count + _ENV_LEN.size + bitops.packed_len(d) + 4
    if end > len(data):
        raise FormatError("truncated envelope")
    indices = struct.unpack_from(f">{count}I", view, pos)
    pos += 4 * count
    (bit_length,) = _ENV_LEN.unpack_from(view, pos)
    pos += _ENV_LEN.size
    cipher = bitops.unpack(bytes(view[pos:end - 4]), d)
    (crc,) = struct.unpack_from(">I", view, end - 4)
    if zlib.crc32(view[offset:end - 4]) != crc:
        raise FormatError("envelope CRC mismatch")
    if list(indices) != sorted(set(indices)):
        raise FormatError("envelope line indices must be distinct and ascending")
    try:
        env = CipherEnvelope(tuple(indices), cipher, int(bit_length))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return env, end


def write_envelopes(path, envelopes: Iterable[CipherEnvelope]) -> None:
    Path(path).write_bytes(b"".join(encode_envelope(e) for e in envelopes))


def read_envelopes(path) -> list[CipherEnvelope]:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        env, pos = decode_envelope(data, pos)
        out.append(env)
    return out


# --- collisions ---------------------------------------------------------------

@dataclass(frozen=True)
class CollisionProb:
    exact: float
    approx: float


def _check_users(n_users: int, total_bits: int) -> int:
    if n_users < 1:
        raise ValueError("need at least one user")
    d = math.isqrt(total_bits) if total_bits > 0 else 0
    if n_users > d:
        raise ValueError(f"N={n_users} users exceed the d={d} lines")
    return d


def _birthday(n_users: int, d: int) -> float:
    """``1 - d! / ((d-N)! d^N)``; exact rational when small, log space otherwise."""
    if n_users <= _EXACT_RATIONAL_MAX_N:
        return float(1 - Fraction(math.perm(d, n_users), d**n_users))
    i = np.arange(n_users, dtype=float)
    return float(-np.expm1(np.log1p(-i / d).sum()))


def collision_prob_one(n_users: int, total_bits: int) -> CollisionProb:
    """Probability that at least two of N users draw the same line."""
    d = _check_users(n_users, total_bits)
    approx = 1.0 - (1.0 - n_users / (2 * d)) ** (n_users - 1)
    return CollisionProb(exact=_birthday(n_users, d), approx=approx)


def collision_prob_all(n_users: int, total_bits: int,
                       line_count: int = DEFAULT_LINE_COUNT) -> float:
    """Order of magnitude for every one of ``line_count`` lines colliding."""
    if line_count < 0:
        raise ValueError("line_count must be non-negative")
    return collision_prob_one(n_users, total_bits).exact ** line_count
