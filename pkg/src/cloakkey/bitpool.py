"""Bit Pool: per-session shared basis bits and the round distillation.

One round shares ``a`` fresh bits coded in bases taken from the pool's
``m*a`` basis bits. Both ends then hold ``n = a + m*a`` common bits,
randomise them with a public seeded permutation (or a Toeplitz hash), drop
``t + lambda`` bits, and split the remaining ``r`` bits into ``z`` key bits
(front) and ``m*a`` bases for the next round (back).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import bits as bitops
from .codec import MaryConfig, basis_indices, decode_sample, encode_sample
from .errors import FormatError, InsufficientBits
from .security import AttackStats, LeakBudget, leak_budget, leaked_bits

SHUFFLE = "shuffle"
TOEPLITZ = "toeplitz"
PA_MODES = (SHUFFLE, TOEPLITZ)
PA_MODE_CODES = {SHUFFLE: 0, TOEPLITZ: 1}

STATE_MAGIC = b"KBPS"
STATE_VERSION = 1
_STATE_HEADER = struct.Struct(">4sBBQQ")


@dataclass
class BitPoolState:
    basis_bits: np.ndarray
    round_index: int
    cfg: MaryConfig
    a: int

    def __post_init__(self) -> None:
        self.basis_bits = bitops.as_bits(self.basis_bits)
        if self.a < 1:
            raise ValueError("a must be >= 1")
        if self.basis_bits.size != self.cfg.m * self.a:
            raise ValueError(f"pool needs m*a = {self.cfg.m * self.a} basis bits, "
                             f"got {self.basis_bits.size}")
        if self.round_index < 0:
            raise ValueError("round_index must be non-negative")

    def copy(self) -> "BitPoolState":
        return BitPoolState(self.basis_bits.copy(), self.round_index, self.cfg, self.a)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitPoolState):
            return NotImplemented
        return (self.round_index == other.round_index and self.cfg == other.cfg
                and self.a == other.a and np.array_equal(self.basis_bits, other.basis_bits))

    def to_bytes(self) -> bytes:
        body = _STATE_HEADER.pack(STATE_MAGIC, STATE_VERSION, self.cfg.m, self.a,
                                  self.round_index) + bitops.pack(self.basis_bits)
        return body + struct.pack(">I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes, cfg: MaryConfig) -> "BitPoolState":
        if len(data) < _STATE_HEADER.size + 4:
            raise FormatError("pool state file is truncated")
        body, (crc,) = data[:-4], struct.unpack(">I", data[-4:])
        if zlib.crc32(body) != crc:
            raise FormatError("pool state CRC mismatch")
        magic, version, m, a, round_index = _STATE_HEADER.unpack_from(body)
        if magic != STATE_MAGIC:
            raise FormatError(f"bad pool state magic {magic!r}")
        if version != STATE_VERSION:
            raise FormatError(f"unsupported pool state version {version}")
        if m != cfg.m:
            raise FormatError(f"pool state was written for m={m}, config has m={cfg.m}")
        packed = body[_STATE_HEADER.size:]
        if len(packed) != bitops.packed_len(m * a):
            raise FormatError("pool state basis length does not match m*a")
        return cls(bitops.unpack(packed, m * a), round_index, cfg, a)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, cfg: MaryConfig) -> "BitPoolState":
        return cls.from_bytes(Path(path).read_bytes(), cfg)


@dataclass(frozen=True)
class RoundParams:
    lam: int
    shuffle_seed: int
    t_override: int | None = None
    mode: str = SHUFFLE

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 <= self.shuffle_seed < 2**128:
            raise ValueError("shuffle_seed must be a 128-bit unsigned integer")
        if self.t_override is not None and self.t_override < 0:
            raise ValueError("t_override must be non-negative")
        if self.mode not in PA_MODES:
            raise ValueError(f"unknown PA mode {self.mode!r}")


@dataclass(frozen=True)
class RoundOutput:
    z_bits: np.ndarray
    new_basis_bits: np.ndarray
    budget: LeakBudget
    round_index: int
    shared: np.ndarray = field(repr=False)

    def same_keys(self, other: "RoundOutput") -> bool:
        return (np.array_equal(self.z_bits, other.z_bits)
                and np.array_equal(self.new_basis_bits, other.new_basis_bits))


def next_bases(state: BitPoolState) -> np.ndarray:
    """Basis numbers for the next ``a`` fresh bits, one per m-bit block."""
    return basis_indices(state.basis_bits, state.cfg.m)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def permutation(n: int, seed: int) -> np.ndarray:
    """Seeded Fisher-Yates permutation of ``range(n)``."""
    return _rng(seed).permutation(n)


def shuffle(bits, seed: int) -> np.ndarray:
    """``out[i] = bits[perm[i]]``; same length, same popcount."""
    arr = np.asarray(bits, dtype=np.uint8)
    return arr[permutation(arr.size, seed)]


def toeplitz_seed_bits(n: int, r: int, seed: int) -> np.ndarray:
    """The ``r + n - 1`` diagonal bits defining an r x n Toeplitz matrix."""
    return _rng(seed).integers(0, 2, size=r + n - 1, dtype=np.uint8)


def toeplitz_hash(bits, out_len: int, seed: int) -> np.ndarray:
    """``y = T x`` over GF(2) with ``T[i, j] = h[i - j + n - 1]``.

    Computed as a real FFT convolution; the integer result is checked to be
    unambiguous before reducing mod 2.
    """
    x = np.asarray(bits, dtype=np.uint8)
    n = x.size
    if not 0 <= out_len <= n:
        raise ValueError("Toeplitz output cannot be longer than its input")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    h = toeplitz_seed_bits(n, out_len, seed)
    size = 1 << int(np.ceil(np.log2(h.size + n - 1)))
    conv = np.fft.irfft(np.fft.rfft(h.astype(float), size) * np.fft.rfft(x.astype(float), size), size)
    window = conv[n - 1:n - 1 + out_len]
    rounded = np.rint(window)
    if np.max(np.abs(window - rounded)) > 0.25:
        raise ArithmeticError("FFT convolution lost integer precision")
    return (rounded.astype(np.int64) & 1).astype(np.uint8)


def _resolve_t(a: int, params: RoundParams, stats: AttackStats | None) -> int:
    if params.t_override is not None:
        return params.t_override
    if stats is None:
        raise ValueError("either stats or params.t_override is required to size t")
    return leaked_bits(a, stats.p_success)


def distill(shared_fresh, state: BitPoolState, params: RoundParams,
            stats: AttackStats | None = None, *, commit: bool = True) -> RoundOutput:
    """Privacy amplification of ``fresh || bases`` into key bits and new bases.

    Raises :class:`InsufficientBits` (state untouched) when ``a <= t + lambda``.
    With ``commit=False`` the state is left as is; apply :func:`commit_round`
    once both ends have confirmed.
    """
    fresh = bitops.as_bits(shared_fresh)
    a, m = state.a, state.cfg.m
    if fresh.size != a:
        raise ValueError(f"expected {a} fresh bits, got {fresh.size}")
    t = _resolve_t(a, params, stats)
    if a <= t + params.lam:
        raise InsufficientBits(f"a={a} leaves no key bits after t={t} and lambda={params.lam}")
    budget = leak_budget(a, m, t, params.lam)
    shared = np.concatenate([fresh, state.basis_bits])
    if params.mode == SHUFFLE:
        kept = shuffle(shared, params.shuffle_seed)[:budget.r]
    else:
        kept = toeplitz_hash(shared, budget.r, params.shuffle_seed)
    out = RoundOutput(z_bits=kept[:budget.z].copy(), new_basis_bits=kept[budget.z:].copy(),
                      budget=budget, round_index=state.round_index + 1, shared=shared)
    assert out.new_basis_bits.size == m * a
    if commit:
        commit_round(state, out)
    return out


def commit_round(state: BitPoolState, out: RoundOutput) -> None:
    if out.round_index != state.round_index + 1:
        raise ValueError("round output does not follow the pool's current round")
    state.basis_bits = out.new_basis_bits.copy()
    state.round_index = out.round_index


NoiseSource = Callable[[int], np.ndarray]


def gaussian_noise(sigma_v: float, seed: int) -> NoiseSource:
    """Recorded-noise stand-in: independent ``N(0, sigma_v)`` draws per coded bit."""
    rng = _rng(seed)

    def draw(n: int) -> np.ndarray:
        return rng.normal(0.0, sigma_v, size=n)

    return draw


def encode_round(state: BitPoolState, fresh_bits, noise: NoiseSource) -> np.ndarray:
    fresh = bitops.as_bits(fresh_bits)
    if fresh.size != state.a:
        raise ValueError(f"expected {state.a} fresh bits, got {fresh.size}")
    ks = next_bases(state)
    return np.asarray(encode_sample(fresh, ks, noise(state.a), state.cfg), dtype=np.int64)


def decode_round(state: BitPoolState, codes) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size != state.a:
        raise ValueError(f"expected {state.a} samples, got {codes.size}")
    return np.asarray(decode_sample(codes, next_bases(state), state.cfg), dtype=np.uint8)


def run_round_tx(state: BitPoolState, fresh_bits, noise: NoiseSource, params: RoundParams,
                 stats: AttackStats | None = None, *, commit: bool = True
                 ) -> tuple[np.ndarray, RoundOutput]:
    """Encode the fresh bits for transmission, then distill. Returns ``(codes, output)``."""
    codes = encode_round(state, fresh_bits, noise)
    return codes, distill(fresh_bits, state, params, stats, commit=commit)


def run_round_rx(state: BitPoolState, codes, params: RoundParams,
                 stats: AttackStats | None = None, *, commit: bool = True) -> RoundOutput:
    fresh = decode_round(state, codes)
    return distill(fresh, state, params, stats, commit=commit)


# --- key store -----------------------------------------------------------

_REC = struct.Struct(">Q")


def append_keystore(path, z_bits) -> None:
    """Append one record: u64 BE bit count, then the bits packed MSB-first."""
    z = bitops.as_bits(z_bits)
    with open(path, "ab") as fh:
        fh.write(_REC.pack(z.size) + bitops.pack(z))


def read_keystore(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts, pos = [], 0
    while pos < len(data):
        if pos + _REC.size > len(data):
            raise FormatError("truncated key store record header")
        (nbits,) = _REC.unpack_from(data, pos)
        pos += _REC.size
        size = bitops.packed_len(nbits)
        if pos + size > len(data):
            raise FormatError("truncated key store record")
        parts.append(bitops.unpack(data[pos:pos + size], nbits))
        pos += size
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)
