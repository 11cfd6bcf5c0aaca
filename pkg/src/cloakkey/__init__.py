"""Noise-cloaked M-ary key distribution with bit-pool privacy amplification."""

from .bitpool import BitPoolState, RoundOutput, RoundParams, distill, run_round_rx, run_round_tx
from .channel import ChannelParams, check_conditions
from .codec import MaryConfig, decode_sample, encode_sample
from .config import RunConfig, load_config
from .entropy import EntropyConfig, LfsrSpec, PhysicalBitGenerator
from .errors import (CloakKeyError, ConfigError, ConfigMismatch, CrcMismatch, FormatError,
                     InsufficientBits, MalformedFrame, ProtocolError, TranscriptMismatch,
                     UnsupportedVersion)
from .security import AttackStats, LeakBudget, attack_stats, leak_budget, ml_attack_guess

__version__ = "0.1.0"

__all__ = [
    "AttackStats", "BitPoolState", "ChannelParams", "CloakKeyError", "ConfigError",
    "ConfigMismatch", "CrcMismatch", "EntropyConfig", "FormatError", "InsufficientBits",
    "LeakBudget", "LfsrSpec", "MalformedFrame", "MaryConfig", "PhysicalBitGenerator",
    "ProtocolError", "RoundOutput", "RoundParams", "RunConfig", "TranscriptMismatch",
    "UnsupportedVersion", "attack_stats", "check_conditions", "decode_sample", "distill",
    "encode_sample", "leak_budget", "load_config", "ml_attack_guess", "run_round_rx",
    "run_round_tx",
]
