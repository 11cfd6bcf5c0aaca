"""TX/RX station sessions and the passive eavesdropper tap.

One session round on the wire::

    TX -> RX  HELLO      32-byte config digest   (RX answers with its own)
    TX -> RX  BATCH*     u32 count, count x u16 ADC codes
    TX -> RX  PA_PARAMS  a u64, t u64, lambda u64, mode u8, seed 16 bytes
    TX <-> RX ACK        32-byte transcript digest (both directions)

Both ends distill without committing, compare digests, and only then
advance their pools. The digest is SHA-256 over the pre-amplification
shared string, so any desync (one wrong basis bit, one misdecoded sample)
is caught. It can reveal at most 256 bits, which is added to lambda.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import bits as bitops
from .bitpool import (PA_MODE_CODES, BitPoolState, NoiseSource, RoundOutput, RoundParams,
                      commit_round, decode_round, distill, encode_round, shuffle, toeplitz_hash,
                      SHUFFLE)
from .codec import MaryConfig, basis_bits_of
from .errors import (CloakKeyError, ConfigMismatch, IncompleteTranscript, MalformedFrame, ProtocolError,
                     TranscriptMismatch)
from .security import AttackStats, attack_stats, binomial_se, ml_attack
from .wire import Frame, FrameStream, Kind, Transport, split_frames

DIGEST_LEAK_BITS = 256
DEFAULT_BATCH = 1 << 15
_PA = struct.Struct(">QQQB16s")
_MODE_BY_CODE = {v: k for k, v in PA_MODE_CODES.items()}


class Role(enum.Enum):
    TX = "tx"
    RX = "rx"
    TAP = "tap"


class Phase(enum.Enum):
    IDLE = "idle"
    BATCH = "batch"
    DISTILL = "distill"
    DONE = "done"


_NEXT_PHASE = {Phase.IDLE: Phase.BATCH, Phase.BATCH: Phase.DISTILL,
               Phase.DISTILL: Phase.DONE, Phase.DONE: Phase.IDLE}


@dataclass
class SessionState:
    role: Role
    pool: BitPoolState
    config_digest: bytes
    phase: Phase = Phase.IDLE
    last_round: int = 0

    def advance(self, to: Phase) -> None:
        if _NEXT_PHASE[self.phase] is not to:
            raise ProtocolError(f"illegal phase transition {self.phase.value} -> {to.value}")
        self.phase = to

    def reset(self) -> None:
        self.phase = Phase.IDLE


@dataclass(frozen=True)
class PaParams:
    a: int
    t: int
    lam: int
    mode: str
    seed: int

    def encode(self) -> bytes:
        return _PA.pack(self.a, self.t, self.lam, PA_MODE_CODES[self.mode], self.seed.to_bytes(16, "big"))

    @classmethod
    def decode(cls, payload: bytes) -> "PaParams":
        if len(payload) != _PA.size:
            raise MalformedFrame(f"PA_PARAMS payload must be {_PA.size} bytes")
        a, t, lam, mode, seed = _PA.unpack(payload)
        if mode not in _MODE_BY_CODE:
            raise MalformedFrame(f"unknown PA mode code {mode}")
        return cls(a, t, lam, _MODE_BY_CODE[mode], int.from_bytes(seed, "big"))

    def round_params(self) -> RoundParams:
        return RoundParams(lam=self.lam, shuffle_seed=self.seed, t_override=self.t, mode=self.mode)


def encode_batch(codes) -> bytes:
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > 0xFFFF):
        raise ValueError("ADC codes must fit in 16 bits")
    return struct.pack(">I", codes.size) + codes.astype(">u2").tobytes()


def decode_batch(payload: bytes) -> np.ndarray:
    if len(payload) < 4:
        raise MalformedFrame("BATCH payload too short")
    (count,) = struct.unpack_from(">I", payload)
    if len(payload) != 4 + 2 * count:
        raise MalformedFrame(f"BATCH declares {count} codes but carries {(len(payload) - 4) // 2}")
    return np.frombuffer(payload, dtype=">u2", offset=4).astype(np.int64)


def transcript_digest(round_index: int, shared) -> bytes:
    h = hashlib.sha256(b"cloakkey/transcript/v1")
    h.update(struct.pack(">IQ", round_index, len(shared)))
    h.update(bitops.pack(shared))
    return h.digest()


def effective_lambda(lam: int, account_digest: bool = True) -> int:
    return lam + DIGEST_LEAK_BITS if account_digest else lam


def _expect(frame: Frame, kind: Kind, round_index: int) -> Frame:
    if frame.kind is Kind.ERROR:
        raise ProtocolError(f"peer reported: {frame.payload.decode('utf-8', 'replace')}")
    if frame.kind is not kind:
        raise ProtocolError(f"expected {kind.name}, got {frame.kind.name}")
    if frame.round != round_index:
        raise ProtocolError(f"frame for round {frame.round}, expected {round_index}")
    return frame


def _hello(streams: Sequence[FrameStream], state: SessionState, rnd: int) -> None:
    for s in streams:
        s.send(Frame(Kind.HELLO, rnd, 0, state.config_digest))
    for s in streams:
        peer = _expect(s.recv(), Kind.HELLO, rnd)
        if peer.payload != state.config_digest:
            raise ConfigMismatch("peer configuration digest differs")


def _acks(streams: Sequence[FrameStream], rnd: int, seq: int, digest: bytes) -> None:
    for s in streams:
        s.send(Frame(Kind.ACK, rnd, seq, digest))
    bad = []
    for i, s in enumerate(streams):
        if _expect(s.recv(), Kind.ACK, rnd).payload != digest:
            bad.append(i)
    if bad:
        raise TranscriptMismatch(f"transcript digest differs for peer(s) {bad}; round aborted")


def run_tx_session(transport: Transport | Sequence[Transport], pool: BitPoolState,
                   params: RoundParams, fresh_bits, noise: NoiseSource,
                   stats: AttackStats | None = None, *, config_digest: bytes,
                   account_digest: bool = True, batch_size: int = DEFAULT_BATCH,
                   record: list[bytes] | None = None) -> RoundOutput:
    """Run one round as TX. A list of transports broadcasts identical frames.

    ``params.lam`` is the security parameter before digest accounting; the
    value sent in PA_PARAMS (and used to distill) adds 256 when
    ``account_digest`` is set. The pool is only advanced once every peer's
    digest matches.
    """
    transports = [transport] if not isinstance(transport, (list, tuple)) else list(transport)
    streams = [FrameStream(t, record if i == 0 else None) for i, t in enumerate(transports)]
    state = SessionState(Role.TX, pool, config_digest)
    rnd = pool.round_index + 1
    _hello(streams, state, rnd)

    fresh = bitops.as_bits(fresh_bits)
    lam = effective_lambda(params.lam, account_digest)
    probe = RoundParams(lam=lam, shuffle_seed=params.shuffle_seed,
                        t_override=params.t_override, mode=params.mode)
    try:
        out = distill(fresh, pool, probe, stats, commit=False)
    except CloakKeyError as exc:
        for s in streams:
            s.send(Frame(Kind.ERROR, rnd, 1, f"{exc.kind}: {exc}".encode()))
        raise

    state.advance(Phase.BATCH)
    codes = encode_round(pool, fresh, noise)
    seq = 1
    for start in range(0, codes.size, batch_size):
        payload = encode_batch(codes[start:start + batch_size])
        for s in streams:
            s.send(Frame(Kind.BATCH, rnd, seq, payload))
        seq += 1

    state.advance(Phase.DISTILL)
    pa = PaParams(pool.a, out.budget.t, lam, params.mode, params.shuffle_seed)
    for s in streams:
        s.send(Frame(Kind.PA_PARAMS, rnd, seq, pa.encode()))
    seq += 1
    _acks(streams, rnd, seq, transcript_digest(rnd, out.shared))

    state.advance(Phase.DONE)
    commit_round(pool, out)
    return out


def run_rx_session(transport: Transport, pool: BitPoolState, *, config_digest: bytes,
                   record: list[bytes] | None = None) -> RoundOutput:
    stream = FrameStream(transport, record)
    state = SessionState(Role.RX, pool, config_digest)
    rnd = pool.round_index + 1
    _hello([stream], state, rnd)

    state.advance(Phase.BATCH)
    parts, got = [], 0
    while True:
        frame = stream.recv()
        if frame.kind is Kind.PA_PARAMS:
            _expect(frame, Kind.PA_PARAMS, rnd)
            break
        codes = decode_batch(_expect(frame, Kind.BATCH, rnd).payload)
        got += codes.size
        if got > pool.a:
            raise ProtocolError(f"TX sent more than a = {pool.a} samples")
        parts.append(codes)
    pa = PaParams.decode(frame.payload)
    if pa.a != pool.a or got != pool.a:
        raise ProtocolError(f"round carries {got} samples for a = {pa.a}; this pool uses a = {pool.a}")

    state.advance(Phase.DISTILL)
    codes = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    fresh = decode_round(pool, codes)
    out = distill(fresh, pool, pa.round_params(), commit=False)
    _acks([stream], rnd, frame.seq + 1, transcript_digest(rnd, out.shared))

    state.advance(Phase.DONE)
    commit_round(pool, out)
    return out


# --- eavesdropper -----------------------------------------------------------

@dataclass(frozen=True)
class TapReport:
    round: int
    guessed_bits: np.ndarray
    guessed_bases: np.ndarray
    pa: PaParams | None
    analytic_p_success: float | None = None
    agreement: float | None = None
    agreement_se: float | None = None
    z_guess: np.ndarray | None = field(default=None, repr=False)
    z_agreement: float | None = None
    z_agreement_se: float | None = None

    @property
    def n(self) -> int:
        return int(self.guessed_bits.size)


def _tap_frames(transcript) -> list[Frame]:
    if isinstance(transcript, (bytes, bytearray, memoryview)):
        return list(split_frames(bytes(transcript)))
    if transcript and isinstance(transcript[0], (bytes, bytearray)):
        return list(split_frames(b"".join(transcript)))
    return list(transcript)


def tap_guess_z(bits: np.ndarray, ks: np.ndarray, cfg: MaryConfig, pa: PaParams) -> np.ndarray:
    """Push the attacker's guesses through the public amplification step."""
    guess_shared = np.concatenate([bits, basis_bits_of(ks, cfg.m)])
    z = pa.a - pa.t - pa.lam
    r = guess_shared.size - pa.t - pa.lam
    if z <= 0:
        return np.zeros(0, dtype=np.uint8)
    if pa.mode == SHUFFLE:
        return shuffle(guess_shared, pa.seed)[:z]
    return toeplitz_hash(guess_shared, r, pa.seed)[:z]


def run_tap(transcript, cfg: MaryConfig, sigma_v: float | None = None, *,
            truth_fresh=None, truth_z=None, round_index: int | None = None) -> TapReport:
    """Replay a recorded round through the nearest-level attacker.

    ``truth_fresh`` / ``truth_z`` (simulation mode) add agreement rates for
    the raw fresh bits and for the distilled key.
    """
    frames = _tap_frames(transcript)
    batches = [f for f in frames if f.kind is Kind.BATCH
               and (round_index is None or f.round == round_index)]
    if not batches:
        raise IncompleteTranscript("no BATCH frames in transcript")
    rnd = batches[0].round
    codes = np.concatenate([decode_batch(f.payload) for f in batches if f.round == rnd])
    pa_frames = [f for f in frames if f.kind is Kind.PA_PARAMS and f.round == rnd]
    pa = PaParams.decode(pa_frames[0].payload) if pa_frames else None
    if pa is not None and pa.a != codes.size:
        raise IncompleteTranscript(f"transcript holds {codes.size} of {pa.a} samples")

    bits, ks = ml_attack(codes, cfg)
    analytic = attack_stats(sigma_v, cfg).p_success if sigma_v else None
    agreement = se = None
    if truth_fresh is not None:
        truth = bitops.as_bits(truth_fresh)
        if truth.size != bits.size:
            raise ValueError("ground truth length differs from the transcript")
        agreement = float(np.mean(bits == truth))
        se = binomial_se(agreement, bits.size)

    z_guess = z_agree = z_se = None
    if truth_z is not None:
        if pa is None:
            raise IncompleteTranscript("PA_PARAMS missing; cannot follow amplification")
        z_guess = tap_guess_z(bits, ks, cfg, pa)
        truth = bitops.as_bits(truth_z)
        if truth.size != z_guess.size:
            raise ValueError("true z length differs from PA_PARAMS")
        z_agree = float(np.mean(z_guess == truth))
        z_se = binomial_se(0.5, truth.size)
    return TapReport(rnd, bits, ks, pa, analytic, agreement, se, z_guess, z_agree, z_se)
