"""Packet captures, bidirectional flow assembly, features, and labeling."""

from .assembly import FlowKey, FlowRecord, SummaryStats, assemble_flows, kernel_available
from .attackstats import (
    AmbiguousLabelError,
    AttackWindow,
    EmptyWindowError,
    WindowParseError,
    WindowStats,
    label_flows,
    load_attack_windows,
    window_stats,
)
from .capture import (
    ACK,
    FIN,
    RST,
    SYN,
    TCP,
    UDP,
    CaptureFormat,
    CaptureFormatError,
    PacketList,
    PacketMeta,
    read_capture,
)
from .features import FEATURE_NAMES, compute_features, export_csv

__all__ = [
    "ACK",
    "AmbiguousLabelError",
    "AttackWindow",
    "CaptureFormat",
    "CaptureFormatError",
    "EmptyWindowError",
    "FEATURE_NAMES",
    "FIN",
    "FlowKey",
    "FlowRecord",
    "PacketList",
    "PacketMeta",
    "RST",
    "SYN",
    "SummaryStats",
    "TCP",
    "UDP",
    "WindowParseError",
    "WindowStats",
    "assemble_flows",
    "compute_features",
    "export_csv",
    "kernel_available",
    "label_flows",
    "load_attack_windows",
    "read_capture",
    "window_stats",
]
