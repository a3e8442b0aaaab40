"""Bidirectional 5-tuple flow assembly.

Packets sharing a canonical key (the first observed packet's source is the
initiator) join one flow until termination: a TCP RST, a FIN seen from
both directions, or an idle gap longer than the timeout; the next packet
under the same key then opens a new flow. Direction is assigned relative
to the initiator.

Two engines implement the same single-pass algorithm: a compiled kernel
(built from ``_kernel.pyx``) and a pure-Python fallback. Selection happens
at import; ``RANGEKIT_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from socket import inet_aton, inet_ntoa

from . import _assembly_py
from .capture import PacketMeta

try:  # compiled kernel is optional
    from . import _kernel as _compiled
except ImportError:  # pragma: no cover - depends on build environment
    _compiled = None

if os.environ.get("RANGEKIT_PURE_PYTHON"):
    _compiled = None

#: Below this packet count the array marshaling outweighs the kernel win.
_KERNEL_MIN_PACKETS = 512

DEFAULT_IDLE_TIMEOUT_S = 120.0


def kernel_available() -> bool:
    return _compiled is not None


@dataclass(frozen=True, slots=True)
class FlowKey:
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    proto: int


@dataclass(frozen=True, slots=True)
class SummaryStats:
    min: float = 0.0
    max: float = 0.0
    mean: float = 0.0
    std: float = 0.0


@dataclass(frozen=True, slots=True)
class FlowRecord:
    key: FlowKey
    first_ts: int
    last_ts: int
    fwd_pkts: int
    bwd_pkts: int
    fwd_bytes: int
    bwd_bytes: int
    fwd_len: SummaryStats
    bwd_len: SummaryStats
    iat_fwd: SummaryStats
    iat_bwd: SummaryStats
    iat_all: SummaryStats
    flag_counts: dict[str, int] = field(default_factory=dict)
    label: str | None = None

    @property
    def total_pkts(self) -> int:
        return self.fwd_pkts + self.bwd_pkts

    @property
    def total_bytes(self) -> int:
        return self.fwd_bytes + self.bwd_bytes

    @property
    def duration_s(self) -> float:
        return (self.last_ts - self.first_ts) / 1e6


def assemble_flows(
    packets: list[PacketMeta],
    idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
    *,
    engine: str = "auto",
) -> list[FlowRecord]:
    """Assemble packets into flow records, in flow-creation order.

    engine: "auto" picks the compiled kernel for large inputs when built,
    "compiled" demands it, "python" forces the fallback.
    """
    if engine not in ("auto", "compiled", "python"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "compiled" and _compiled is None:
        raise RuntimeError("compiled kernel not available")

    ordered = packets if _is_sorted(packets) else sorted(packets, key=lambda p: p.ts)
    timeout_us = math.inf if math.isinf(idle_timeout_s) else int(round(idle_timeout_s * 1e6))

    use_kernel = engine == "compiled" or (
        engine == "auto" and _compiled is not None and len(ordered) >= _KERNEL_MIN_PACKETS
    )
    if use_kernel and not math.isinf(timeout_us):
        return _assemble_compiled(ordered, timeout_us)
    if use_kernel:
        # the kernel takes an integer timeout; saturate for "never idle out"
        return _assemble_compiled(ordered, (1 << 62))
    accs = _assembly_py.assemble(ordered, timeout_us)
    return [_record_from_acc(a) for a in accs]


def _is_sorted(packets: list[PacketMeta]) -> bool:
    return all(packets[i].ts <= packets[i + 1].ts for i in range(len(packets) - 1))


def _stats(n: int, lo: float, hi: float, mean: float, m2: float) -> SummaryStats:
    if n == 0:
        return SummaryStats()
    return SummaryStats(min=float(lo), max=float(hi), mean=mean, std=math.sqrt(m2 / n))


def _record_from_acc(a: _assembly_py.FlowAcc) -> FlowRecord:
    return FlowRecord(
        key=FlowKey(a.init_ip, a.init_port, a.resp_ip, a.resp_port, a.proto),
        first_ts=a.first_ts,
        last_ts=a.last_ts,
        fwd_pkts=a.fwd_pkts,
        bwd_pkts=a.bwd_pkts,
        fwd_bytes=a.fwd_bytes,
        bwd_bytes=a.bwd_bytes,
        fwd_len=_stats(a.fwd_pkts, a.fwd_min, a.fwd_max, a.fwd_mean, a.fwd_m2),
        bwd_len=_stats(a.bwd_pkts, a.bwd_min, a.bwd_max, a.bwd_mean, a.bwd_m2),
        iat_fwd=_stats(a.iatf_n, a.iatf_min, a.iatf_max, a.iatf_mean, a.iatf_m2),
        iat_bwd=_stats(a.iatb_n, a.iatb_min, a.iatb_max, a.iatb_mean, a.iatb_m2),
        iat_all=_stats(a.iata_n, a.iata_min, a.iata_max, a.iata_mean, a.iata_m2),
        flag_counts={"SYN": a.syn, "FIN": a.fin, "RST": a.rst, "ACK": a.ack},
    )


def _ip_to_int(ip: str) -> int:
    return struct.unpack("!I", inet_aton(ip))[0]


def _int_to_ip(value: int) -> str:
    return inet_ntoa(struct.pack("!I", value))


def _assemble_compiled(packets: list[PacketMeta], timeout_us: int) -> list[FlowRecord]:
    import numpy as np

    n = len(packets)
    ts = np.empty(n, dtype=np.int64)
    src_ep = np.empty(n, dtype=np.uint64)
    dst_ep = np.empty(n, dtype=np.uint64)
    proto = np.empty(n, dtype=np.uint8)
    length = np.empty(n, dtype=np.int64)
    flags = np.empty(n, dtype=np.uint8)
    ip_cache: dict[str, int] = {}
    for i, p in enumerate(packets):
        src = ip_cache.get(p.src_ip)
        if src is None:
            src = ip_cache[p.src_ip] = _ip_to_int(p.src_ip)
        dst = ip_cache.get(p.dst_ip)
        if dst is None:
            dst = ip_cache[p.dst_ip] = _ip_to_int(p.dst_ip)
        ts[i] = p.ts
        src_ep[i] = (src << 16) | p.src_port
        dst_ep[i] = (dst << 16) | p.dst_port
        proto[i] = p.proto
        length[i] = p.length
        flags[i] = p.tcp_flags or 0

    rows = _compiled.assemble(ts, src_ep, dst_ep, proto, length, flags, timeout_us)
    records = []
    for row in rows:
        (
            init_ep, resp_ep, prt, first_ts, last_ts,
            fwd_pkts, bwd_pkts, fwd_bytes, bwd_bytes,
            fwd_min, fwd_max, fwd_mean, fwd_m2,
            bwd_min, bwd_max, bwd_mean, bwd_m2,
            iatf_n, iatf_min, iatf_max, iatf_mean, iatf_m2,
            iatb_n, iatb_min, iatb_max, iatb_mean, iatb_m2,
            iata_n, iata_min, iata_max, iata_mean, iata_m2,
            syn, fin, rst, ack,
        ) = row
        records.append(
            FlowRecord(
                key=FlowKey(
                    _int_to_ip(init_ep >> 16), init_ep & 0xFFFF,
                    _int_to_ip(resp_ep >> 16), resp_ep & 0xFFFF,
                    prt,
                ),
                first_ts=first_ts,
                last_ts=last_ts,
                fwd_pkts=fwd_pkts,
                bwd_pkts=bwd_pkts,
                fwd_bytes=fwd_bytes,
                bwd_bytes=bwd_bytes,
                fwd_len=_stats(fwd_pkts, fwd_min, fwd_max, fwd_mean, fwd_m2),
                bwd_len=_stats(bwd_pkts, bwd_min, bwd_max, bwd_mean, bwd_m2),
                iat_fwd=_stats(iatf_n, iatf_min, iatf_max, iatf_mean, iatf_m2),
                iat_bwd=_stats(iatb_n, iatb_min, iatb_max, iatb_mean, iatb_m2),
                iat_all=_stats(iata_n, iata_min, iata_max, iata_mean, iata_m2),
                flag_counts={"SYN": syn, "FIN": fin, "RST": rst, "ACK": ack},
            )
        )
    return records
