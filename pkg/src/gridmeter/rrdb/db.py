"""Fixed-size layered round-robin time-series store.

Each layer is a ring of ``(sum, count)`` slots at one resolution. Every
accepted value is accumulated into the slot covering its timestamp in every
layer whose retention window still reaches it, so a coarse slot always holds
the exact mean of the raw values that fell in its interval. A slot is reset
when the ring wraps onto a newer interval.
"""

from __future__ import annotations

import csv
import logging
import math
import threading
from array import array
from dataclasses import dataclass

from gridmeter.errors import ConfigError, ExportError, StaleError

log = logging.getLogger(__name__)

EMPTY = -(1 << 62)  # slot start marking a never-written slot
EXPORT_COLUMNS = ["t", "host", "metric", "group", "value", "resolution_s"]


@dataclass(frozen=True)
class LayerSpec:
    resolution_s: int
    slot_count: int

    @property
    def span_s(self) -> int:
        return self.resolution_s * self.slot_count


def parse_layers(text: str) -> list[LayerSpec]:
    """``1x900,15x960,300x1152`` -> layer specs (resolution x slots)."""
    specs = []
    for item in text.split(","):
        res, sep, count = item.strip().partition("x")
        try:
            specs.append(LayerSpec(int(res), int(count)))
        except ValueError:
            raise ConfigError(f"bad layer spec {item.strip()!r} (want <seconds>x<slots>)") from None
        if not sep:
            raise ConfigError(f"bad layer spec {item.strip()!r}")
    return specs


DEFAULT_LAYERS = parse_layers("1x900,15x960,300x1152")


def validate_specs(specs) -> None:
    if not specs:
        raise ConfigError("at least one layer is required")
    for s in specs:
        if s.resolution_s <= 0 or s.slot_count <= 0:
            raise ConfigError(f"layer {s}: resolution and slot count must be positive")
    for fine, coarse in zip(specs, specs[1:]):
        if coarse.resolution_s % fine.resolution_s:
            raise ConfigError(f"{coarse.resolution_s}s layer is not a multiple of {fine.resolution_s}s")
        if coarse.resolution_s == fine.resolution_s:
            raise ConfigError("successive layers must get coarser")
        if coarse.span_s <= fine.span_s:
            raise ConfigError(f"{coarse.resolution_s}s layer must span more than {fine.resolution_s}s layer")


class Layer:
    __slots__ = ("spec", "sums", "counts", "starts")

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        n = spec.slot_count
        self.sums = array("d", bytes(8 * n))
        self.counts = array("q", bytes(8 * n))
        self.starts = array("q", [EMPTY]) * n

    @property
    def nbytes(self) -> int:
        return sum(a.itemsize * len(a) for a in (self.sums, self.counts, self.starts))

    def window_start(self, latest_t: float) -> int:
        r = self.spec.resolution_s
        return (math.floor(latest_t / r) - (self.spec.slot_count - 1)) * r

    def covers(self, t: float, latest_t: float) -> bool:
        return t >= self.window_start(latest_t)

    def add(self, t: float, value: float) -> None:
        r = self.spec.resolution_s
        start = math.floor(t / r) * r
        i = (start // r) % self.spec.slot_count
        if self.starts[i] != start:
            self.starts[i] = start
            self.sums[i] = value
            self.counts[i] = 1
        else:
            self.sums[i] += value
            self.counts[i] += 1

    def slots(self, latest_t: float):
        """Yield ``(start, sum, count)`` for live slots, oldest first."""
        lo = self.window_start(latest_t)
        live = [(self.starts[i], self.sums[i], self.counts[i])
                for i in range(self.spec.slot_count)
                if self.counts[i] and self.starts[i] >= lo]
        return sorted(live)


def footprint_for(specs) -> int:
    """Slot memory in bytes for a store built from ``specs``."""
    return sum(3 * 8 * s.slot_count for s in specs)


class RoundRobinDb:
    def __init__(self, specs=None, series_key=("", "", "")):
        specs = list(specs or DEFAULT_LAYERS)
        validate_specs(specs)
        self.specs = specs
        self.series_key = tuple(series_key)
        self.layers = [Layer(s) for s in specs]
        self.latest_t = None
        self.first_t = None
        self.export_hwm = None
        self.inserts = 0
        self._lock = threading.Lock()

    @property
    def footprint_bytes(self) -> int:
        return sum(layer.nbytes for layer in self.layers)

    def insert(self, t: float, value: float) -> None:
        value = float(value)
        with self._lock:
            if self.latest_t is not None and not self.layers[0].covers(t, self.latest_t):
                raise StaleError(f"t={t} is older than the finest layer's window "
                                 f"(starts {self.layers[0].window_start(self.latest_t)})")
            latest = t if self.latest_t is None else max(self.latest_t, t)
            for layer in self.layers:
                if layer.covers(t, latest):
                    layer.add(t, value)
            self.latest_t = latest
            self.first_t = t if self.first_t is None else min(self.first_t, t)
            self.inserts += 1

    def select_layer(self, t_from: float, want_resolution_s: float | None = None) -> int | None:
        """Index of the finest eligible layer whose window reaches ``t_from``."""
        if self.latest_t is None:
            return None
        for i, layer in enumerate(self.layers):
            if want_resolution_s is not None and layer.spec.resolution_s < want_resolution_s:
                continue
            if layer.covers(t_from, self.latest_t):
                return i
        return len(self.layers) - 1

    def query(self, t_from: float, t_to: float, want_resolution_s: float | None = None):
        """Points ``(t, mean, resolution_s)`` for slots overlapping [t_from, t_to]."""
        if t_from > t_to:
            raise ValueError(f"t_from {t_from} > t_to {t_to}")
        with self._lock:
            idx = self.select_layer(t_from, want_resolution_s)
            if idx is None:
                return []
            layer = self.layers[idx]
            r = layer.spec.resolution_s
            return [(start, s / c, r) for start, s, c in layer.slots(self.latest_t)
                    if start + r > t_from and start <= t_to]

    def export_high_frequency(self, t_from: float, t_to: float, writer) -> "ExportResult":
        """Append finest-layer slots in range as CSV rows; never re-export a slot.

        ``writer`` is a ``csv.writer`` or a text file. Slots that wrapped out
        of the finest layer before being exported are reported as a lost
        interval rather than substituted from a coarser layer.
        """
        if not hasattr(writer, "writerow"):
            writer = csv.writer(writer, lineterminator="\n")
        host, metric, group = self.series_key
        with self._lock:
            if self.latest_t is None:
                return ExportResult(0, None)
            fine = self.layers[0]
            r = fine.spec.resolution_s
            lo = fine.window_start(self.latest_t)
            lost = None
            pending = (self.export_hwm + r if self.export_hwm is not None
                       else math.floor(self.first_t / r) * r)
            pending = max(pending, math.floor(t_from / r) * r)
            end = min(lo, math.floor(t_to / r) * r + r)
            if pending < end:
                lost = (pending, end)
            rows = [(start, s / c) for start, s, c in fine.slots(self.latest_t)
                    if t_from <= start <= t_to
                    and (self.export_hwm is None or start > self.export_hwm)]
        written = 0
        for start, value in rows:
            try:
                writer.writerow([start, host, metric, group, repr(value), r])
            except OSError as e:
                raise ExportError(f"export of {self.series_key} failed: {e}", self.export_hwm) from e
            self.export_hwm = start
            written += 1
        return ExportResult(written, lost)


@dataclass(frozen=True)
class ExportResult:
    records: int
    lost: tuple | None  # [start, end) interval of unexported slots that wrapped


@dataclass(frozen=True)
class ExportRecord:
    t: int
    series_key: tuple
    value: float
    resolution_s: int


def read_export(path_or_file):
    """Parse an export CSV back into ExportRecords."""
    fh = open(path_or_file, newline="", encoding="utf-8") if isinstance(path_or_file, str) else path_or_file
    try:
        out = []
        for row in csv.DictReader(fh):
            out.append(ExportRecord(int(float(row["t"])), (row["host"], row["metric"], row["group"]),
                                    float(row["value"]), int(float(row["resolution_s"]))))
        return out
    finally:
        if isinstance(path_or_file, str):
            fh.close()
