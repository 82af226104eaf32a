"""
Configuration management for fluidnet.

- Data: ~/.local/share/fluidnet/ (runs.log), or FLUIDNET_HOME
- Network configs: TOML files with a [network] section, passed per command
- FLUIDNET_THREADS caps Monte Carlo workers; FLUIDNET_LOG_LEVEL sets logging
"""

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

DEFAULT_DATA_HOME = Path.home() / ".local" / "share" / "fluidnet"
DEFAULT_LOG_LEVEL = "WARNING"

REQUIRED_KEYS = ("d", "alpha", "T", "Q", "r", "mu", "c", "exogenous")


class ConfigError(ValueError):
    """Malformed network config; carries the 1-based line (and column) when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


def get_fluidnet_home() -> Path:
    """Get the fluidnet data directory (~/.local/share/fluidnet or FLUIDNET_HOME)."""
    if env_home := os.environ.get("FLUIDNET_HOME"):
        return Path(env_home)
    return DEFAULT_DATA_HOME


def get_runs_log_path() -> Path:
    """Get the path to runs.log."""
    return get_fluidnet_home() / "runs.log"


def ensure_dirs() -> None:
    """Ensure all required directories exist."""
    get_fluidnet_home().mkdir(parents=True, exist_ok=True)


def worker_count() -> int:
    """Monte Carlo worker cap from FLUIDNET_THREADS (default: all CPUs)."""
    raw = os.environ.get("FLUIDNET_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"FLUIDNET_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"FLUIDNET_THREADS must be at least 1, got {value}")
    return value


def log_level() -> str:
    return os.environ.get("FLUIDNET_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()


def config_hash(document: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON of a parsed config; blind to whitespace and comments."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class NetworkConfig:
    """A parsed network config: the network, its horizon, and the document hash."""

    network: Any
    horizon: float
    digest: str
    source: Path | None = None


def _key_line(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return lineno
    return None


def _decode_error(e: Exception) -> ConfigError:
    line = getattr(e, "lineno", None)
    column = getattr(e, "colno", None)
    message = getattr(e, "msg", None) or str(e)
    if line is None:
        match = re.search(r"line (\d+), column (\d+)", str(e))
        if match:
            line, column = int(match.group(1)), int(match.group(2))
            message = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(e))
    return ConfigError(message, line=line, column=column)


def _number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _vector(section: dict, key: str, d: int, text: str) -> list[float]:
    value = section[key]
    if not isinstance(value, list) or not all(_number(v) for v in value):
        raise ConfigError(f"{key} must be a list of numbers", line=_key_line(text, key))
    if len(value) != d:
        raise ConfigError(f"{key} has {len(value)} entries, expected {d}",
                          line=_key_line(text, key))
    return [float(v) for v in value]


def parse_network_config(text: str, source: Path | None = None) -> NetworkConfig:
    """Parse the TOML text of a network config."""
    import tomli
    from pydantic import ValidationError

    from fluidnet.network import FluidNetwork, SlowlyVarying

    try:
        document = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise _decode_error(e) from None

    section = document.get("network")
    if not isinstance(section, dict):
        raise ConfigError("missing [network] section")
    for key in REQUIRED_KEYS:
        if key not in section:
            raise ConfigError(f"missing key {key!r} in [network]")

    d = section["d"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ConfigError("d must be a positive integer", line=_key_line(text, "d"))
    for key in ("alpha", "T"):
        if not _number(section[key]):
            raise ConfigError(f"{key} must be a number", line=_key_line(text, key))
    horizon = float(section["T"])
    if not horizon > 0.0:
        raise ConfigError("T must be positive", line=_key_line(text, "T"))

    rows = section["Q"]
    if (
        not isinstance(rows, list)
        or len(rows) != d
        or not all(isinstance(row, list) and len(row) == d for row in rows)
        or not all(_number(v) for row in rows for v in row)
    ):
        raise ConfigError(f"Q must be a {d}x{d} array of numbers", line=_key_line(text, "Q"))

    exogenous = section["exogenous"]
    if not isinstance(exogenous, list) or not all(
        isinstance(i, int) and not isinstance(i, bool) for i in exogenous
    ):
        raise ConfigError("exogenous must be a list of node numbers",
                          line=_key_line(text, "exogenous"))
    if any(not 1 <= i <= d for i in exogenous):
        raise ConfigError(f"exogenous nodes must lie in 1..{d}", line=_key_line(text, "exogenous"))

    try:
        slowly = SlowlyVarying.parse(str(section.get("L", "const")))
    except (ValueError, ValidationError) as e:
        raise ConfigError(str(e), line=_key_line(text, "L")) from None

    try:
        network = FluidNetwork(
            d=d,
            Q=[[float(v) for v in row] for row in rows],
            r=_vector(section, "r", d, text),
            mu=_vector(section, "mu", d, text),
            exogenous=[i - 1 for i in exogenous],
            c=_vector(section, "c", d, text),
            alpha=float(section["alpha"]),
            L=slowly,
        )
    except ValidationError as e:
        raise ConfigError(str(e)) from None

    return NetworkConfig(network=network, horizon=horizon, digest=config_hash(document),
                         source=source)


def load_network_config(path: Path | str) -> NetworkConfig:
    """Load a network config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    return parse_network_config(text, source=path)
