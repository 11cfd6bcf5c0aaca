"""Run configuration: INI file sections, validation, canonical form and digest.

Sections and keys (all optional; defaults are the 10 V operating point)::

    [channel]  optical_power laser_wavelength gain detector_efficiency
               resistance capacitance temperature
    [mary]     M b_max
    [protocol] a lam pa_mode leak_model account_digest
    [seeds]    basis fresh noise shuffle entropy
    [network]  host port timeout
    [files]    pool_state keystore

The HELLO digest is SHA-256 over the canonical text of the ``channel``,
``mary`` and ``protocol`` sections, so two stations only talk when they
agree on every value that changes the bits on the wire.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Iterable

from .bitpool import PA_MODES, SHUFFLE
from .channel import ChannelParams
from .codec import MaryConfig
from .errors import CloakKeyError, ConfigError
from .security import LEAK_MODELS, CONSERVATIVE

DIGEST_SECTIONS = ("channel", "mary", "protocol")


@dataclass(frozen=True)
class ProtocolConfig:
    a: int = 4096
    lam: int = 64
    pa_mode: str = SHUFFLE
    leak_model: str = CONSERVATIVE
    account_digest: bool = True

    def __post_init__(self) -> None:
        if self.a < 1:
            raise ConfigError("protocol.a must be >= 1")
        if self.lam < 0:
            raise ConfigError("protocol.lam must be >= 0")
        if self.pa_mode not in PA_MODES:
            raise ConfigError(f"protocol.pa_mode must be one of {PA_MODES}")
        if self.leak_model not in LEAK_MODELS:
            raise ConfigError(f"protocol.leak_model must be one of {LEAK_MODELS}")


@dataclass(frozen=True)
class SeedConfig:
    basis: int = 1
    fresh: int = 2
    noise: int = 3
    shuffle: int = 4
    entropy: int = 5

    def __post_init__(self) -> None:
        for f in fields(self):
            if not 0 <= getattr(self, f.name) < 2**64:
                raise ConfigError(f"seeds.{f.name} must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class NetworkConfig:
    host: str = "127.0.0.1"
    port: int = 47300
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if not 0 <= self.port < 65536:
            raise ConfigError("network.port must lie in [0, 65535]")
        if not self.timeout > 0:
            raise ConfigError("network.timeout must be positive")


@dataclass(frozen=True)
class FileConfig:
    pool_state: str = "pool.kbps"
    keystore: str = "keys.kbks"


@dataclass(frozen=True)
class RunConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    mary: MaryConfig = field(default_factory=MaryConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    files: FileConfig = field(default_factory=FileConfig)

    def section_dict(self) -> dict[str, dict[str, Any]]:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    def canonical(self, sections: Iterable[str] | None = None) -> str:
        """Stable ``key = value`` text; floats use the shortest round-trip repr."""
        data = self.section_dict()
        names = [f.name for f in fields(self)] if sections is None else list(sections)
        lines = []
        for name in names:
            lines.append(f"[{name}]")
            for key, value in data[name].items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical(DIGEST_SECTIONS).encode("ascii")).digest()

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        """Apply ``{"section.key": "text"}`` overrides, parsing each like the file would."""
        grouped: dict[str, dict[str, str]] = {}
        for dotted, text in overrides.items():
            section, _, key = dotted.partition(".")
            if not key:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            grouped.setdefault(section, {})[key] = text
        return _apply(self, grouped)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, like: Any, where: str) -> Any:
    try:
        if isinstance(like, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text, 0)
        if isinstance(like, float):
            return float(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(like).__name__}") from None


def _apply(cfg: RunConfig, grouped: dict[str, dict[str, str]]) -> RunConfig:
    changes = {}
    for section, items in grouped.items():
        if section not in {f.name for f in fields(cfg)}:
            raise ConfigError(f"unknown config section [{section}]")
        current = getattr(cfg, section)
        known = {f.name: getattr(current, f.name) for f in fields(current)}
        parsed = {}
        for key, text in items.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            parsed[key] = _parse(text, known[key], f"{section}.{key}")
        try:
            changes[section] = replace(current, **parsed)
        except CloakKeyError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return replace(cfg, **changes)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep "M" distinct from "m"
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    grouped = {s: dict(parser.items(s)) for s in parser.sections()}
    return _apply(base or RunConfig(), grouped)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
