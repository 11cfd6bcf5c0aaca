"""Bit-vector helpers. Bits are ``uint8`` numpy arrays holding 0/1."""

from __future__ import annotations

from typing import Iterable

import numpy as np


def as_bits(bits: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(bits if isinstance(bits, np.ndarray) else list(bits), dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("bit vectors must be one-dimensional")
    if arr.size and arr.max() > 1:
        raise ValueError("bit vectors may only contain 0 and 1")
    return arr


def pack(bits: np.ndarray) -> bytes:
    """Pack bits MSB-first; the last byte is zero-padded."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="big").tobytes()


def unpack(data: bytes, nbits: int | None = None) -> np.ndarray:
    arr = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")
    if nbits is not None:
        if nbits > arr.size:
            raise ValueError(f"need {nbits} bits, only {arr.size} available")
        arr = arr[:nbits]
    return arr.astype(np.uint8)


def packed_len(nbits: int) -> int:
    return (nbits + 7) // 8


def to_str(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits))


def from_str(text: str) -> np.ndarray:
    return as_bits(int(ch) for ch in text if ch in "01")
