"""Pure-Python flow assembly kernel.

This is the fallback engine behind :func:`rangekit.flows.assemble_flows`;
the compiled kernel in ``_kernel.pyx`` implements the same single-pass
algorithm over packed arrays. Keep the two in lockstep.
"""

from __future__ import annotations

from .capture import ACK, FIN, RST, SYN, PacketMeta


class FlowAcc:
    """Single-pass accumulator for one bidirectional flow."""

    __slots__ = (
        "init_ip", "init_port", "resp_ip", "resp_port", "proto",
        "first_ts", "last_ts",
        "fwd_pkts", "bwd_pkts", "fwd_bytes", "bwd_bytes",
        "fwd_min", "fwd_max", "fwd_mean", "fwd_m2",
        "bwd_min", "bwd_max", "bwd_mean", "bwd_m2",
        "last_fwd_ts", "last_bwd_ts",
        "iatf_n", "iatf_min", "iatf_max", "iatf_mean", "iatf_m2",
        "iatb_n", "iatb_min", "iatb_max", "iatb_mean", "iatb_m2",
        "iata_n", "iata_min", "iata_max", "iata_mean", "iata_m2",
        "syn", "fin", "rst", "ack",
        "fin_fwd", "fin_bwd", "closed",
    )

    def __init__(self, src_ip: str, src_port: int, dst_ip: str, dst_port: int, proto: int, ts: int):
        self.init_ip = src_ip
        self.init_port = src_port
        self.resp_ip = dst_ip
        self.resp_port = dst_port
        self.proto = proto
        self.first_ts = ts
        self.last_ts = ts
        self.fwd_pkts = 0
        self.bwd_pkts = 0
        self.fwd_bytes = 0
        self.bwd_bytes = 0
        self.fwd_min = 0
        self.fwd_max = 0
        self.fwd_mean = 0.0
        self.fwd_m2 = 0.0
        self.bwd_min = 0
        self.bwd_max = 0
        self.bwd_mean = 0.0
        self.bwd_m2 = 0.0
        self.last_fwd_ts = -1
        self.last_bwd_ts = -1
        self.iatf_n = 0
        self.iatf_min = 0.0
        self.iatf_max = 0.0
        self.iatf_mean = 0.0
        self.iatf_m2 = 0.0
        self.iatb_n = 0
        self.iatb_min = 0.0
        self.iatb_max = 0.0
        self.iatb_mean = 0.0
        self.iatb_m2 = 0.0
        self.iata_n = 0
        self.iata_min = 0.0
        self.iata_max = 0.0
        self.iata_mean = 0.0
        self.iata_m2 = 0.0
        self.syn = 0
        self.fin = 0
        self.rst = 0
        self.ack = 0
        self.fin_fwd = False
        self.fin_bwd = False
        self.closed = False

    def add(self, packet: PacketMeta, fwd: bool) -> None:
        ts = packet.ts
        length = packet.length
        if self.fwd_pkts or self.bwd_pkts:
            dt = (ts - self.last_ts) / 1e6
            self.iata_n, self.iata_min, self.iata_max, self.iata_mean, self.iata_m2 = _welford(
                dt, self.iata_n, self.iata_min, self.iata_max, self.iata_mean, self.iata_m2
            )
        self.last_ts = ts

        if fwd:
            if self.fwd_pkts == 0:
                self.fwd_min = self.fwd_max = length
            else:
                self.fwd_min = min(self.fwd_min, length)
                self.fwd_max = max(self.fwd_max, length)
                dt = (ts - self.last_fwd_ts) / 1e6
                self.iatf_n, self.iatf_min, self.iatf_max, self.iatf_mean, self.iatf_m2 = _welford(
                    dt, self.iatf_n, self.iatf_min, self.iatf_max, self.iatf_mean, self.iatf_m2
                )
            self.fwd_pkts += 1
            self.fwd_bytes += length
            d = length - self.fwd_mean
            self.fwd_mean += d / self.fwd_pkts
            self.fwd_m2 += d * (length - self.fwd_mean)
            self.last_fwd_ts = ts
        else:
            if self.bwd_pkts == 0:
                self.bwd_min = self.bwd_max = length
            else:
                self.bwd_min = min(self.bwd_min, length)
                self.bwd_max = max(self.bwd_max, length)
                dt = (ts - self.last_bwd_ts) / 1e6
                self.iatb_n, self.iatb_min, self.iatb_max, self.iatb_mean, self.iatb_m2 = _welford(
                    dt, self.iatb_n, self.iatb_min, self.iatb_max, self.iatb_mean, self.iatb_m2
                )
            self.bwd_pkts += 1
            self.bwd_bytes += length
            d = length - self.bwd_mean
            self.bwd_mean += d / self.bwd_pkts
            self.bwd_m2 += d * (length - self.bwd_mean)
            self.last_bwd_ts = ts

        flags = packet.tcp_flags or 0
        if flags:
            if flags & SYN:
                self.syn += 1
            if flags & FIN:
                self.fin += 1
                if fwd:
                    self.fin_fwd = True
                else:
                    self.fin_bwd = True
            if flags & RST:
                self.rst += 1
            if flags & ACK:
                self.ack += 1
            if flags & RST or (self.fin_fwd and self.fin_bwd):
                self.closed = True


def _welford(x: float, n: int, lo: float, hi: float, mean: float, m2: float):
    if n == 0:
        lo = hi = x
    else:
        lo = min(lo, x)
        hi = max(hi, x)
    n += 1
    d = x - mean
    mean += d / n
    m2 += d * (x - mean)
    return n, lo, hi, mean, m2


def assemble(packets: list[PacketMeta], idle_timeout_us: int) -> list[FlowAcc]:
    """Group time-sorted packets into flows; returns accumulators in
    flow-creation order."""
    flows: list[FlowAcc] = []
    active: dict[tuple, int] = {}
    for packet in packets:
        src = (packet.src_ip, packet.src_port)
        dst = (packet.dst_ip, packet.dst_port)
        key = (min(src, dst), max(src, dst), packet.proto)
        index = active.get(key)
        if index is not None:
            acc = flows[index]
            if acc.closed or packet.ts - acc.last_ts > idle_timeout_us:
                index = None
        if index is None:
            acc = FlowAcc(packet.src_ip, packet.src_port, packet.dst_ip, packet.dst_port, packet.proto, packet.ts)
            active[key] = len(flows)
            flows.append(acc)
        forward = (packet.src_ip, packet.src_port) == (acc.init_ip, acc.init_port)
        acc.add(packet, forward)
    return flows
