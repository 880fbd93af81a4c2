"""XML metric packets over UDP.

Grammar (UTF-8, no whitespace between elements, attribute order fixed)::

    <metrics host="H" t="T"><metric name="N" val="V" units="U"[ group="G"][ gaps="K"]/>...</metrics>

``V`` is a decimal with at most three fractional digits and ``T`` integer
seconds since the epoch. Packets too large for one datagram are split
between metrics, so every datagram decodes on its own.
"""

from __future__ import annotations

import ipaddress
import logging
import re
import socket
import struct
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from gridmeter.errors import ConfigError, DecodeError, TransportError

log = logging.getLogger(__name__)

DEFAULT_PORT = 8649
DEFAULT_MAX_DATAGRAM = 8192
NAME_RE = re.compile(r"[A-Za-z0-9_.]+\Z")
# characters XML 1.0 cannot carry at all
_XML_ILLEGAL = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff\ufffe\uffff]")
_ESCAPES = {"&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;",
            "\t": "&#9;", "\n": "&#10;", "\r": "&#13;"}
_ESCAPE_RE = re.compile("[&<>\"\t\n\r]")


def _text_ok(value: str) -> bool:
    return isinstance(value, str) and not _XML_ILLEGAL.search(value)


@dataclass(frozen=True)
class Metric:
    name: str
    value: float
    units: str = ""
    group: str | None = None
    gaps: int | None = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not NAME_RE.match(self.name):
            raise ValueError(f"bad metric name {self.name!r}")
        v = float(self.value)
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError(f"metric {self.name}: value must be finite")
        # the wire carries three fractional digits; normalise up front so
        # that decode(encode(m)) == m
        object.__setattr__(self, "value", round(v, 3) + 0.0)
        if not _text_ok(self.units) or (self.group is not None and not _text_ok(self.group)):
            raise ValueError(f"metric {self.name}: units/group contain characters XML cannot carry")
        if self.gaps is not None and (not isinstance(self.gaps, int) or self.gaps < 0):
            raise ValueError(f"metric {self.name}: gaps must be a non-negative integer")


@dataclass(frozen=True)
class MetricPacket:
    host: str
    t: int
    metrics: tuple[Metric, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not self.host or not _text_ok(self.host):
            raise ValueError("packet host must be a non-empty XML-safe string")
        if not isinstance(self.t, int) or isinstance(self.t, bool) or self.t < 0:
            raise ValueError(f"packet t must be a non-negative integer, got {self.t!r}")
        if not self.metrics:
            raise ValueError("packet must carry at least one metric")


def _attr(value: str) -> str:
    return _ESCAPE_RE.sub(lambda m: _ESCAPES[m.group()], value)


def format_value(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _metric_xml(m: Metric) -> str:
    s = f'<metric name="{m.name}" val="{format_value(m.value)}" units="{_attr(m.units)}"'
    if m.group is not None:
        s += f' group="{_attr(m.group)}"'
    if m.gaps is not None:
        s += f' gaps="{m.gaps}"'
    return s + "/>"


def _head(packet: MetricPacket) -> str:
    return f'<metrics host="{_attr(packet.host)}" t="{packet.t}">'


_TAIL = "</metrics>"


def encode_xml(packet: MetricPacket) -> bytes:
    return (_head(packet) + "".join(map(_metric_xml, packet.metrics)) + _TAIL).encode("utf-8")


def encode_datagrams(packet: MetricPacket, max_datagram: int = DEFAULT_MAX_DATAGRAM) -> list[bytes]:
    """Encode, splitting between metrics so each datagram fits ``max_datagram``."""
    head = _head(packet).encode("utf-8")
    tail = _TAIL.encode("utf-8")
    budget = max_datagram - len(head) - len(tail)
    out, current, size = [], [], 0
    for m in packet.metrics:
        body = _metric_xml(m).encode("utf-8")
        if len(body) > budget:
            raise ValueError(f"metric {m.name} alone exceeds max_datagram={max_datagram}")
        if current and size + len(body) > budget:
            out.append(head + b"".join(current) + tail)
            current, size = [], 0
        current.append(body)
        size += len(body)
    out.append(head + b"".join(current) + tail)
    return out


def _required(el, name):
    value = el.get(name)
    if value is None:
        raise DecodeError(f"<{el.tag}> missing required attribute {name!r}")
    return value


def decode_xml(data: bytes) -> MetricPacket:
    if b"<!" in data:
        raise DecodeError("DTDs, comments and CDATA are not part of the grammar")
    try:
        root = ET.fromstring(data.decode("utf-8"))
    except (UnicodeDecodeError, ET.ParseError) as e:
        raise DecodeError(f"malformed datagram: {e}") from None
    if root.tag != "metrics":
        raise DecodeError(f"unexpected root <{root.tag}>")
    host = _required(root, "host")
    t_text = _required(root, "t")
    if not t_text.isdigit():
        raise DecodeError(f"bad timestamp {t_text!r}")
    metrics = []
    for el in root:
        if el.tag != "metric":
            raise DecodeError(f"unexpected element <{el.tag}>")
        val = _required(el, "val")
        if not re.fullmatch(r"-?\d+(\.\d{1,3})?", val):
            raise DecodeError(f"bad value {val!r}")
        gaps = el.get("gaps")
        if gaps is not None and not gaps.isdigit():
            raise DecodeError(f"bad gaps {gaps!r}")
        try:
            metrics.append(Metric(_required(el, "name"), float(val), _required(el, "units"),
                                  el.get("group"), None if gaps is None else int(gaps)))
        except ValueError as e:
            raise DecodeError(str(e)) from None
    try:
        return MetricPacket(host, int(t_text), tuple(metrics))
    except ValueError as e:
        raise DecodeError(str(e)) from None


@dataclass(frozen=True)
class TransportConfig:
    mode: str = "unicast"
    addr: str = f"127.0.0.1:{DEFAULT_PORT}"
    max_datagram: int = DEFAULT_MAX_DATAGRAM
    multicast_if: str = "0.0.0.0"
    ttl: int = 1

    def __post_init__(self):
        if self.mode not in ("unicast", "multicast"):
            raise ConfigError(f"unknown transport mode {self.mode!r}")
        host, _ = self.endpoint
        if self.mode == "multicast":
            try:
                ok = ipaddress.ip_address(host).is_multicast
            except ValueError:
                ok = False
            if not ok:
                raise ConfigError(f"{host} is not a multicast group address")
        if self.max_datagram < 128:
            raise ConfigError("max_datagram too small")

    @property
    def endpoint(self) -> tuple[str, int]:
        host, sep, port = self.addr.rpartition(":")
        if not sep:
            return self.addr, DEFAULT_PORT
        try:
            return host, int(port)
        except ValueError:
            raise ConfigError(f"bad port in {self.addr!r}") from None


class Sender:
    """Fire-and-forget UDP sender; reuse one instance per emitting task."""

    def __init__(self, transport: TransportConfig):
        self.transport = transport
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            if transport.mode == "multicast":
                self.sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, transport.ttl)
                self.sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
                self.sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_IF,
                                     socket.inet_aton(transport.multicast_if))
        except OSError as e:
            raise TransportError(f"cannot open UDP socket: {e}") from e
        self.datagrams = 0

    def send(self, packet: MetricPacket) -> int:
        datagrams = encode_datagrams(packet, self.transport.max_datagram)
        dest = self.transport.endpoint
        for d in datagrams:
            try:
                self.sock.sendto(d, dest)
            except ConnectionRefusedError:
                pass  # stale ICMP from an earlier datagram; loss is not an error
            except OSError as e:
                raise TransportError(f"send to {self.transport.addr} failed: {e}") from e
        self.datagrams += len(datagrams)
        return len(datagrams)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def send(packet: MetricPacket, transport: TransportConfig) -> int:
    with Sender(transport) as s:
        return s.send(packet)


class Receiver:
    def __init__(self, transport: TransportConfig, bind_host: str | None = None):
        self.transport = transport
        host, port = transport.endpoint
        self.received = 0
        self.dropped = 0
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 20)
            if transport.mode == "multicast":
                self.sock.bind((bind_host or "", port))
                mreq = struct.pack("4s4s", socket.inet_aton(host),
                                   socket.inet_aton(transport.multicast_if))
                self.sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
            else:
                self.sock.bind((bind_host if bind_host is not None else host, port))
        except OSError as e:
            raise TransportError(f"cannot bind {transport.addr}: {e}") from e
        self.port = self.sock.getsockname()[1]

    def recv_loop(self, sink, stop: threading.Event | None = None, poll_s: float = 0.2) -> None:
        """Decode each datagram and pass it to ``sink`` until ``stop`` is set."""
        stop = stop or threading.Event()
        self.sock.settimeout(poll_s)
        while not stop.is_set():
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                if stop.is_set():
                    break
                raise
            try:
                packet = decode_xml(data)
            except DecodeError as e:
                self.dropped += 1
                log.debug("dropped datagram: %s", e)
                continue
            self.received += 1
            sink(packet)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def recv_loop(transport: TransportConfig, sink, stop: threading.Event | None = None) -> Receiver:
    with Receiver(transport) as r:
        r.recv_loop(sink, stop)
    return r
