"""Simulated physical random bit generator.

The chain is: sample the amplified detector voltage in short windows,
classify each sample above/below the mean, then XOR the raw stream with a
Fibonacci LFSR keystream to break up low-frequency bias. Run-length
statistics of the output are compared with the ideal ``P(k) = 2^-k``.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from . import channel
from .channel import ChannelParams

FIXED_ANALYTIC = "fixed-analytic"
RUNNING_AVERAGE = "running-average"


@dataclass(frozen=True)
class EntropyConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    sampling_window: float = 1e-9
    seed: int = 0
    mean_reference_mode: str = FIXED_ANALYTIC
    running_window: int = 4096
    # Optional digitisation before classification; full scale is 2<V>.
    adc_bits: int | None = None

    def __post_init__(self) -> None:
        if not self.sampling_window > 0:
            raise ValueError("sampling_window must be positive")
        if self.mean_reference_mode not in (FIXED_ANALYTIC, RUNNING_AVERAGE):
            raise ValueError(f"unknown mean_reference_mode {self.mean_reference_mode!r}")
        if self.running_window < 1:
            raise ValueError("running_window must be >= 1")


@dataclass(frozen=True)
class LfsrSpec:
    """Fibonacci LFSR.

    Stages are numbered 1..width with stage ``width`` feeding the output;
    the feedback (XOR of the tapped stages) enters stage 1. Tap lists use
    the usual maximal-length table convention, e.g. ``(4, 3)`` for
    ``x^4 + x^3 + 1``. ``initial_state`` bit i (LSB = 0) is stage i+1.
    """

    width: int = 32
    taps: tuple[int, ...] = (32, 22, 2, 1)
    initial_state: int = 0x1

    def __post_init__(self) -> None:
        if self.width < 2:
            raise ValueError("LFSR width must be >= 2")
        if not self.taps or any(not 1 <= t <= self.width for t in self.taps):
            raise ValueError(f"taps must be non-empty and lie in [1, {self.width}]")
        if self.initial_state & ((1 << self.width) - 1) == 0 or self.initial_state >> self.width:
            raise ValueError("initial_state must be a non-zero value of `width` bits")

    @classmethod
    def from_bits(cls, width: int, taps: Iterable[int], state_bits: Iterable[int]) -> "LfsrSpec":
        bits = list(state_bits)
        if len(bits) != width:
            raise ValueError("state bit string length must equal width")
        return cls(width, tuple(taps), sum(int(b) << i for i, b in enumerate(bits)))


class Lfsr:
    """Running keystream generator for an :class:`LfsrSpec`."""

    def __init__(self, spec: LfsrSpec) -> None:
        self.spec = spec
        self.state = spec.initial_state
        self._mask = (1 << spec.width) - 1
        self._tapmask = sum(1 << (t - 1) for t in spec.taps)
        self._out_shift = spec.width - 1

    def keystream(self, n: int) -> np.ndarray:
        out = bytearray(n)
        state, tapmask, mask, shift = self.state, self._tapmask, self._mask, self._out_shift
        for i in range(n):
            out[i] = (state >> shift) & 1
            fb = (state & tapmask).bit_count() & 1
            state = ((state << 1) | fb) & mask
        self.state = state
        return np.frombuffer(bytes(out), dtype=np.uint8).copy()


def lfsr_keystream(spec: LfsrSpec, n: int) -> np.ndarray:
    return Lfsr(spec).keystream(n)


def lfsr_whiten(bits, spec: LfsrSpec = LfsrSpec()) -> np.ndarray:
    """XOR ``bits`` with the LFSR keystream; same length, an involution."""
    arr = np.asarray(bits, dtype=np.uint8)
    return arr ^ lfsr_keystream(spec, arr.size)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _digitize(v: np.ndarray, full_scale: float, adc_bits: int) -> np.ndarray:
    step = full_scale / 2**adc_bits
    codes = np.clip(np.floor(v / step), 0, 2**adc_bits - 1)
    return (codes + 0.5) * step


def sample_voltages(count: int, cfg: EntropyConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Gaussian detector voltages ``N(<V>, sigma_V)``; seeded by ``cfg.seed`` by default."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = _rng(cfg.seed) if rng is None else rng
    mean = channel.mean_voltage(cfg.channel)
    v = rng.normal(mean, channel.sigma_v(cfg.channel), size=count)
    if cfg.adc_bits is not None:
        v = _digitize(v, 2 * mean, cfg.adc_bits)
    return v


def classify_bits(voltages, mean_reference) -> np.ndarray:
    """1 above the reference, 0 below; samples exactly at the reference are dropped."""
    v = np.asarray(voltages, dtype=float)
    if v.size == 0:
        raise ValueError("no voltages to classify")
    ref = np.broadcast_to(np.asarray(mean_reference, dtype=float), v.shape)
    keep = v != ref
    return (v[keep] > ref[keep]).astype(np.uint8)


def running_reference(voltages: np.ndarray, window: int, history: np.ndarray | None = None) -> np.ndarray:
    """Mean of the preceding ``window`` samples (causal); the first sample uses itself."""
    hist = np.empty(0) if history is None else np.asarray(history, dtype=float)[-window:]
    full = np.concatenate([hist, voltages])
    csum = np.concatenate([[0.0], np.cumsum(full)])
    idx = np.arange(hist.size, full.size)
    lo = np.maximum(idx - window, 0)
    count = idx - lo
    ref = np.where(count > 0, (csum[idx] - csum[lo]) / np.maximum(count, 1), full[idx])
    return ref


class PhysicalBitGenerator:
    """Streaming, seeded PhRBG: voltages -> raw bits -> LFSR-whitened bits."""

    def __init__(self, cfg: EntropyConfig = EntropyConfig(), lfsr: LfsrSpec | None = LfsrSpec(),
                 chunk: int = 1 << 16) -> None:
        self.cfg = cfg
        self._rng = _rng(cfg.seed)
        self._lfsr = Lfsr(lfsr) if lfsr is not None else None
        self._chunk = chunk
        self._history = np.empty(0)
        self._mean = channel.mean_voltage(cfg.channel)
        self.raw_samples = 0
        self.discarded = 0

    def raw_bits(self, n: int) -> np.ndarray:
        parts, have = [], 0
        while have < n:
            v = sample_voltages(max(self._chunk, n - have), self.cfg, self._rng)
            if self.cfg.mean_reference_mode == RUNNING_AVERAGE:
                ref = running_reference(v, self.cfg.running_window, self._history)
                self._history = np.concatenate([self._history, v])[-self.cfg.running_window:]
            else:
                ref = self._mean
            b = classify_bits(v, ref)
            self.raw_samples += v.size
            self.discarded += v.size - b.size
            parts.append(b)
            have += b.size
        out = np.concatenate(parts)
        # Surplus bits are dropped so each call consumes fresh samples.
        return out[:n]

    def bits(self, n: int) -> np.ndarray:
        raw = self.raw_bits(n)
        if self._lfsr is None:
            return raw
        return raw ^ self._lfsr.keystream(n)


def run_length_histogram(bits) -> dict[int, int]:
    """Counts of maximal runs of identical bits, zeros and ones pooled."""
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.size == 0:
        raise ValueError("empty bit sequence")
    edges = np.flatnonzero(np.diff(arr)) + 1
    bounds = np.concatenate([[0], edges, [arr.size]])
    lengths = np.diff(bounds)
    counts = np.bincount(lengths)
    return {int(k): int(c) for k, c in enumerate(counts) if c}


class DegenerateFit(ValueError):
    pass


@dataclass(frozen=True)
class RunLengthFit:
    """``count(k) = c * exp(-k ln2 (1 - eps))``; eps = 0 is the ideal coin."""

    c: float
    eps: float
    c_err: float
    eps_err: float
    histogram: tuple[tuple[int, float], ...]


def _pairs(hist) -> list[tuple[int, float]]:
    items = hist.items() if isinstance(hist, Mapping) else hist
    return [(int(k), float(n)) for k, n in items]


def fit_run_length(hist) -> RunLengthFit:
    """Weighted least squares of log-counts, weights equal to the counts.

    ``hist`` is a mapping ``k -> count`` or a sequence of ``(k, count)``
    pairs; repeated ``k`` values (several measured series) are fitted jointly.
    Zero-count bins carry no weight and are skipped.
    """
    pairs = _pairs(hist)
    if any(n < 0 for _, n in pairs):
        raise ValueError("counts must be non-negative")
    used = [(k, n) for k, n in pairs if n > 0]
    if len({k for k, _ in used}) < 3:
        raise DegenerateFit("run-length fit needs at least 3 non-empty bins")
    k = np.array([p[0] for p in used], dtype=float)
    n = np.array([p[1] for p in used], dtype=float)
    # log n + k ln2 = log c + eps * (k ln2)
    x = k * math.log(2)
    y = np.log(n) + x
    design = np.column_stack([np.ones_like(x), x])
    normal = design.T @ (n[:, None] * design)
    beta = np.linalg.solve(normal, design.T @ (n * y))
    resid = y - design @ beta
    dof = max(len(used) - 2, 1)
    cov = np.linalg.inv(normal) * float(n @ resid**2) / dof
    log_c, eps = beta
    c = math.exp(log_c)
    return RunLengthFit(c=c, eps=float(eps), c_err=c * math.sqrt(cov[0, 0]),
                        eps_err=math.sqrt(cov[1, 1]), histogram=tuple(pairs))


def bias_zscore(bits) -> float:
    """Binomial z-score of the fraction of ones against 1/2."""
    arr = np.asarray(bits, dtype=np.uint8)
    return (arr.mean() - 0.5) / (0.5 / math.sqrt(arr.size))
