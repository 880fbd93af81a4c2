"""Grid workload emulation and per-process resource monitoring."""

__version__ = "0.1.0"
