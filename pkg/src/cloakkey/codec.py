"""M-ary basis coding of single bits with cyclic wrapping and ADC quantization.

A bit ``a`` travels as the voltage ``a*b_max + b(k) + noise`` reduced modulo
``2*b_max``, where ``b(k)`` is the alternating basis map

    b(k) = b_max * (k/M - (1 - (-1)^k)/2),   k = 0..M-1.

After wrapping, the 2M (bit, k) pairs occupy every point of a lattice with
step ``b_max/M``; neighbouring lattice points carry opposite bits except at
the two seams (between M-1|M and 2M-1|0). The ADC is sized to that lattice
(2M levels, one more bit than ``m``) with level centres on lattice points,
so a noiseless sample lands exactly on its level.

All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

MAX_M = 2**15  # ADC codes must fit a u16 on the wire


@dataclass(frozen=True)
class MaryConfig:
    M: int = 1024
    b_max: float = 10.0

    def __post_init__(self) -> None:
        if not isinstance(self.M, (int, np.integer)) or self.M < 4 or self.M & (self.M - 1):
            raise ConfigError(f"M must be a power of two >= 4, got {self.M!r}")
        if self.M > MAX_M:
            raise ConfigError(f"M must be <= {MAX_M} so ADC codes fit 16 bits")
        if not (math.isfinite(self.b_max) and self.b_max > 0):
            raise ConfigError("b_max must be positive")

    @property
    def m(self) -> int:
        return self.M.bit_length() - 1

    @property
    def v_max(self) -> float:
        return 2.0 * self.b_max

    @property
    def bit_level_zero(self) -> float:
        return 0.0

    @property
    def bit_level_one(self) -> float:
        return self.b_max

    @property
    def basis_spacing(self) -> float:
        """Distance between same-bit bases, ``v_max / M``."""
        return self.v_max / self.M

    @property
    def grid_step(self) -> float:
        """Distance between neighbouring (bit, basis) levels, ``v_max / 2M``."""
        return self.v_max / (2 * self.M)

    @property
    def adc_levels(self) -> int:
        return 2 * self.M

    @property
    def adc_bits(self) -> int:
        return self.m + 1

    @property
    def lsb(self) -> float:
        return self.v_max / self.adc_levels


def _out(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def basis_index(basis_bits, m: int | None = None) -> int:
    """Basis number from m bits; the first bit is the least significant."""
    bits = np.asarray(basis_bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size < 2:
        raise ValueError("basis_index needs a 1-D block of at least 2 bits")
    if m is not None and bits.size != m:
        raise ValueError(f"expected {m} basis bits, got {bits.size}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("basis bits must be 0 or 1")
    return int(np.dot(bits, 1 << np.arange(bits.size, dtype=np.int64)))


def basis_indices(basis_bits: np.ndarray, m: int) -> np.ndarray:
    """Map consecutive m-bit blocks to basis numbers (vectorised basis_index)."""
    bits = np.asarray(basis_bits, dtype=np.int64)
    if bits.size % m:
        raise ValueError(f"{bits.size} basis bits do not split into {m}-bit blocks")
    return bits.reshape(-1, m) @ (1 << np.arange(m, dtype=np.int64))


def basis_bits_of(k, m: int) -> np.ndarray:
    """Inverse of :func:`basis_indices`: LSB-first bit blocks, flattened."""
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    return ((k[:, None] >> np.arange(m, dtype=np.int64)) & 1).astype(np.uint8).ravel()


def basis_voltage(k, cfg: MaryConfig):
    k = np.asarray(k, dtype=np.int64)
    if np.any((k < 0) | (k >= cfg.M)):
        raise ValueError("basis index out of range")
    odd = (k & 1).astype(float)
    return _out(cfg.b_max * (k / cfg.M - odd))


def wrap(v, cfg: MaryConfig):
    """Reduce voltages modulo ``2*b_max`` into ``[0, 2*b_max)``."""
    period = cfg.v_max
    r = np.mod(np.asarray(v, dtype=float), period)
    r = np.where(r >= period, r - period, r)
    return _out(r)


def bit_level(bit, cfg: MaryConfig):
    b = np.asarray(bit)
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0 or 1")
    return _out(b * cfg.b_max)


def quantize(v, cfg: MaryConfig):
    """Nearest ADC level for wrapped voltages; the top half-level folds to 0."""
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize a non-finite voltage")
    code = np.floor(arr / cfg.lsb + 0.5).astype(np.int64) % cfg.adc_levels
    return _out(code)


def dequantize(code, cfg: MaryConfig):
    c = np.asarray(code, dtype=np.int64)
    if np.any((c < 0) | (c >= cfg.adc_levels)):
        raise ValueError("ADC code out of range")
    return _out(c * cfg.lsb)


def encode_sample(bit, k, noise_v, cfg: MaryConfig):
    """ADC code of ``bit`` sent in basis ``k`` with additive noise."""
    v = bit_level(bit, cfg) + basis_voltage(k, cfg) + np.asarray(noise_v, dtype=float)
    return quantize(wrap(v, cfg), cfg)


def cyclic_distance(x, y, cfg: MaryConfig):
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % cfg.v_max
    return _out(np.minimum(d, cfg.v_max - d))


def decode_sample(code, k, cfg: MaryConfig):
    """Legitimate receiver: remove the known basis, then pick the closer bit level.

    An exact tie (residual at b_max/2 or 3*b_max/2) decodes to 0.
    """
    residual = wrap(np.asarray(dequantize(code, cfg)) - np.asarray(basis_voltage(k, cfg)), cfg)
    d0 = cyclic_distance(residual, cfg.bit_level_zero, cfg)
    d1 = cyclic_distance(residual, cfg.bit_level_one, cfg)
    return _out((np.asarray(d1) < np.asarray(d0)).astype(np.uint8))


def grid_index(bit, k, cfg: MaryConfig):
    """Lattice position (in units of ``grid_step``) of a noiseless (bit, k) sample."""
    b = np.asarray(bit, dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    return _out((b * cfg.M + k + (k & 1) * cfg.M) % (2 * cfg.M))


def grid_symbol(g, cfg: MaryConfig):
    """Inverse of :func:`grid_index`: ``(bit, k)`` arrays for lattice positions."""
    g = np.asarray(g, dtype=np.int64) % (2 * cfg.M)
    upper = g >= cfg.M
    k = np.where(upper, g - cfg.M, g)
    bit = ((g & 1) ^ upper).astype(np.uint8)
    return _out(bit), _out(k)


def candidate_levels(cfg: MaryConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All 2M wrapped (bit, k) levels, computed directly from the basis map."""
    k = np.tile(np.arange(cfg.M), 2)
    bit = np.repeat(np.array([0, 1], dtype=np.uint8), cfg.M)
    volts = wrap(bit * cfg.b_max + basis_voltage(k, cfg), cfg)
    return volts, bit, k
