"""Job parameterisation: the `key=value` config format and its overrides."""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass

from gridmeter.errors import ConfigError
from gridmeter.loadgen.pareto import sample_pareto

SIZE_SUFFIXES = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30, "T": 1 << 40}
DEFAULT_SINK = "127.0.0.1:8650"


@dataclass(frozen=True)
class LoadParams:
    net_seconds: float = 0.0
    mem_bytes: int = 0
    cpu_seconds: float = 0.0
    duty_p: float = 1.0
    pareto_alpha: float = 3.0
    pareto_xmin: float = 1.0
    sink_addr: str = DEFAULT_SINK
    rng_seed: int = 0
    slot_ms: int = 100

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "LoadParams":
        return dataclasses.replace(self, **changes)


def validate(p: LoadParams) -> None:
    if not 0.0 <= p.duty_p <= 1.0:
        raise ConfigError("duty_p out of range [0,1]")
    if p.net_seconds < 0:
        raise ConfigError("net_seconds must be >= 0")
    if p.cpu_seconds < 0:
        raise ConfigError("cpu_seconds must be >= 0")
    if p.mem_bytes < 0:
        raise ConfigError("mem_bytes must be >= 0")
    if p.pareto_alpha <= 0:
        raise ConfigError("pareto_alpha must be > 0")
    if p.pareto_xmin <= 0:
        raise ConfigError("pareto_xmin must be > 0")
    if p.slot_ms <= 0:
        raise ConfigError("slot_ms must be > 0")
    if not 0 <= p.rng_seed < 1 << 64:
        raise ConfigError("rng_seed must be an unsigned 64-bit integer")
    parse_hostport(p.sink_addr)


def parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"expected host:port, got {text!r}")
    try:
        port_no = int(port)
    except ValueError:
        raise ConfigError(f"bad port in {text!r}") from None
    if not 0 <= port_no <= 65535:
        raise ConfigError(f"port out of range in {text!r}")
    return host.strip("[]"), port_no


def parse_size(text: str) -> int:
    """Parse a byte count, accepting binary K/M/G/T suffixes (``16M``)."""
    s = text.strip().upper().removesuffix("IB").removesuffix("B")
    mult = 1
    if s and s[-1] in SIZE_SUFFIXES:
        mult = SIZE_SUFFIXES[s[-1]]
        s = s[:-1]
    value = float(s) * mult
    if value != int(value):
        raise ValueError(f"not a whole byte count: {text!r}")
    return int(value)


def _duration(text: str) -> float:
    value = float(text)
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError("not finite")
    return value


# "pareto" for a duration draws it from the job's own Pareto parameters.
PARETO = "pareto"

_FIELD_PARSERS = {
    "net_seconds": _duration,
    "mem_bytes": parse_size,
    "cpu_seconds": _duration,
    "duty_p": float,
    "pareto_alpha": float,
    "pareto_xmin": float,
    "sink_addr": str,
    "rng_seed": lambda s: int(s, 0),
    "slot_ms": int,
}


def _parse_line(raw: str, where: str) -> tuple[str, str] | None:
    line = raw.split("#", 1)[0].strip()
    if not line:
        return None
    key, sep, value = line.partition("=")
    if not sep:
        raise ConfigError(f"{where}: expected key=value, got {raw.strip()!r}")
    return key.strip(), value.strip()


def parse_config(file_text: str = "", overrides=()) -> LoadParams:
    """Build LoadParams from config text plus ``key=value`` overrides.

    Overrides win over file values; absent keys keep their defaults. A
    duration given as ``pareto`` is drawn once, deterministically from
    ``rng_seed``, after every other key has been read.
    """
    raw: dict[str, tuple[str, str]] = {}
    for lineno, line in enumerate(file_text.splitlines(), start=1):
        parsed = _parse_line(line, f"line {lineno}")
        if parsed:
            raw[parsed[0]] = (parsed[1], f"line {lineno}")
    for i, item in enumerate(overrides, start=1):
        parsed = _parse_line(item, f"override {i}")
        if parsed:
            raw[parsed[0]] = (parsed[1], f"override {i} ({item!r})")

    values = {}
    pareto_fields = []
    for key, (text, where) in raw.items():
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"unknown key {key!r} ({where})")
        if key in ("net_seconds", "cpu_seconds") and text.lower() == PARETO:
            pareto_fields.append(key)
            continue
        try:
            values[key] = _FIELD_PARSERS[key](text)
        except ValueError:
            raise ConfigError(f"{where}: cannot parse {key}={text!r}") from None

    params = LoadParams(**values)
    if pareto_fields:
        rng = random.Random(f"pareto:{params.rng_seed}")
        drawn = {
            name: sample_pareto(rng, params.pareto_alpha, params.pareto_xmin)
            for name in sorted(pareto_fields)
        }
        params = params.replace(**drawn)
    return params


def format_config(p: LoadParams) -> str:
    return "".join(f"{f.name}={getattr(p, f.name)}\n" for f in dataclasses.fields(p))
