"""Layered round-robin metric storage and the collector daemon."""

from gridmeter.rrdb.collector import Collector
from gridmeter.rrdb.db import (
    DEFAULT_LAYERS, EXPORT_COLUMNS, ExportRecord, ExportResult, LayerSpec, RoundRobinDb,
    footprint_for, parse_layers, read_export, validate_specs,
)

__all__ = [
    "Collector", "DEFAULT_LAYERS", "EXPORT_COLUMNS", "ExportRecord", "ExportResult", "LayerSpec",
    "RoundRobinDb", "footprint_for", "parse_layers", "read_export", "validate_specs",
]
