"""Exception hierarchy shared by every module.

Each error carries a short machine-readable ``kind`` and the process exit
code the CLI maps it to (2 config, 3 protocol/format, 4 verification).
"""

from __future__ import annotations


class CloakKeyError(Exception):
    kind = "Error"
    exit_code = 3


class ConfigError(CloakKeyError, ValueError):
    kind = "ConfigError"
    exit_code = 2


class InsufficientBits(CloakKeyError):
    """A round cannot leave any key bits after discarding ``t + lambda``."""

    kind = "InsufficientBits"
    exit_code = 3


class ProtocolError(CloakKeyError):
    kind = "ProtocolError"
    exit_code = 3


class MalformedFrame(ProtocolError):
    kind = "MalformedFrame"


class CrcMismatch(ProtocolError):
    kind = "CrcMismatch"


class UnsupportedVersion(ProtocolError):
    kind = "UnsupportedVersion"


class ProtocolTimeout(ProtocolError):
    kind = "Timeout"


class IncompleteTranscript(ProtocolError):
    kind = "IncompleteTranscript"


class FormatError(CloakKeyError):
    """A persisted file (pool state, envelope, key store) failed to parse."""

    kind = "FormatError"
    exit_code = 3


class ConfigMismatch(CloakKeyError):
    kind = "ConfigMismatch"
    exit_code = 4


class TranscriptMismatch(CloakKeyError):
    kind = "TranscriptMismatch"
    exit_code = 4
