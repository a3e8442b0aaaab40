"""Flow feature catalog and CSV export.

A fixed, ordered catalog of 24 per-flow values. Degenerate conventions:
single-packet flows have zero duration, rates, stddevs, and IAT stats;
the down/up byte ratio is zero when no forward bytes exist.
"""

from __future__ import annotations

import math

from .assembly import FlowRecord
from .capture import TCP, UDP

CATALOG_VERSION = "1"

FEATURE_NAMES = (
    "duration_s",
    "fwd_pkts",
    "bwd_pkts",
    "total_pkts",
    "fwd_bytes",
    "bwd_bytes",
    "total_bytes",
    "pps",
    "bytes_per_s",
    "pkt_len_mean",
    "pkt_len_min",
    "pkt_len_max",
    "pkt_len_std",
    "fwd_len_mean",
    "fwd_len_min",
    "fwd_len_max",
    "fwd_len_std",
    "bwd_len_mean",
    "bwd_len_std",
    "iat_mean",
    "iat_std",
    "syn_count",
    "rst_count",
    "down_up_byte_ratio",
)

_PROTO_NAMES = {TCP: "TCP", UDP: "UDP"}


def _combined_length_stats(flow: FlowRecord) -> tuple[float, float, float, float]:
    """Pool per-direction length stats into (mean, min, max, std)."""
    nf, nb = flow.fwd_pkts, flow.bwd_pkts
    n = nf + nb
    if n == 0:
        return 0.0, 0.0, 0.0, 0.0
    mean = flow.total_bytes / n
    if nf and nb:
        lo = min(flow.fwd_len.min, flow.bwd_len.min)
        hi = max(flow.fwd_len.max, flow.bwd_len.max)
        m2 = (
            flow.fwd_len.std**2 * nf
            + flow.bwd_len.std**2 * nb
            + (flow.fwd_len.mean - flow.bwd_len.mean) ** 2 * nf * nb / n
        )
        return mean, lo, hi, math.sqrt(m2 / n)
    side = flow.fwd_len if nf else flow.bwd_len
    return mean, side.min, side.max, side.std


def compute_features(flow: FlowRecord) -> dict[str, float]:
    """The 24-value feature catalog, in FEATURE_NAMES order."""
    duration = flow.duration_s
    total_pkts = flow.total_pkts
    total_bytes = flow.total_bytes
    pkt_mean, pkt_min, pkt_max, pkt_std = _combined_length_stats(flow)
    return {
        "duration_s": duration,
        "fwd_pkts": float(flow.fwd_pkts),
        "bwd_pkts": float(flow.bwd_pkts),
        "total_pkts": float(total_pkts),
        "fwd_bytes": float(flow.fwd_bytes),
        "bwd_bytes": float(flow.bwd_bytes),
        "total_bytes": float(total_bytes),
        "pps": total_pkts / duration if duration > 0 else 0.0,
        "bytes_per_s": total_bytes / duration if duration > 0 else 0.0,
        "pkt_len_mean": pkt_mean,
        "pkt_len_min": pkt_min,
        "pkt_len_max": pkt_max,
        "pkt_len_std": pkt_std,
        "fwd_len_mean": flow.fwd_len.mean,
        "fwd_len_min": flow.fwd_len.min,
        "fwd_len_max": flow.fwd_len.max,
        "fwd_len_std": flow.fwd_len.std,
        "bwd_len_mean": flow.bwd_len.mean,
        "bwd_len_std": flow.bwd_len.std,
        "iat_mean": flow.iat_all.mean,
        "iat_std": flow.iat_all.std,
        "syn_count": float(flow.flag_counts.get("SYN", 0)),
        "rst_count": float(flow.flag_counts.get("RST", 0)),
        "down_up_byte_ratio": flow.bwd_bytes / flow.fwd_bytes if flow.fwd_bytes else 0.0,
    }


def _format_value(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return format(value, ".6g")


def export_csv(flows: list[FlowRecord]) -> bytes:
    """Render flows plus features as a deterministic CSV document.

    Rows are sorted by (first_ts, key); integral values print exactly,
    fractional ones at 6 significant digits. The first line records the
    catalog version.
    """
    lines = [f"# flow feature catalog v{CATALOG_VERSION}"]
    header = ["src_ip", "src_port", "dst_ip", "dst_port", "proto", *FEATURE_NAMES, "label"]
    lines.append(",".join(header))

    def sort_key(flow: FlowRecord):
        k = flow.key
        return (flow.first_ts, k.src_ip, k.src_port, k.dst_ip, k.dst_port, k.proto)

    for flow in sorted(flows, key=sort_key):
        features = compute_features(flow)
        key = flow.key
        row = [
            key.src_ip,
            str(key.src_port),
            key.dst_ip,
            str(key.dst_port),
            _PROTO_NAMES.get(key.proto, str(key.proto)),
            *(_format_value(features[name]) for name in FEATURE_NAMES),
            flow.label or "",
        ]
        lines.append(",".join(row))
    return ("\n".join(lines) + "\n").encode("utf-8")
