"""Independent brute-force references used as test oracles.

Kept deliberately naive: group first, then rescan each group linearly.
Do not import implementation internals here beyond plain data types.
"""

from rangekit.flows.capture import FIN, RST, PacketMeta


def brute_force_flows(packets: list[PacketMeta], idle_timeout_s: float):
    """Group packets by unordered 5-tuple, then split each group by a
    linear rescan on timeout and TCP termination.

    Returns a list of dicts with the canonical key, first_ts, and
    per-direction packet/byte counts.
    """
    timeout_us = idle_timeout_s * 1e6
    groups: dict[tuple, list[PacketMeta]] = {}
    order: list[tuple] = []
    for p in sorted(packets, key=lambda p: p.ts):
        a = (p.src_ip, p.src_port)
        b = (p.dst_ip, p.dst_port)
        key = (min(a, b), max(a, b), p.proto)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(p)

    flows = []
    for key in order:
        segment = None
        for p in groups[key]:
            if segment is not None:
                gap = p.ts - segment["last_ts"]
                if segment["closed"] or gap > timeout_us:
                    flows.append(segment)
                    segment = None
            if segment is None:
                segment = {
                    "initiator": (p.src_ip, p.src_port),
                    "responder": (p.dst_ip, p.dst_port),
                    "proto": p.proto,
                    "first_ts": p.ts,
                    "last_ts": p.ts,
                    "fwd_pkts": 0,
                    "bwd_pkts": 0,
                    "fwd_bytes": 0,
                    "bwd_bytes": 0,
                    "fin_fwd": False,
                    "fin_bwd": False,
                    "closed": False,
                }
            segment["last_ts"] = p.ts
            forward = (p.src_ip, p.src_port) == segment["initiator"]
            if forward:
                segment["fwd_pkts"] += 1
                segment["fwd_bytes"] += p.length
            else:
                segment["bwd_pkts"] += 1
                segment["bwd_bytes"] += p.length
            flags = p.tcp_flags or 0
            if flags & FIN:
                if forward:
                    segment["fin_fwd"] = True
                else:
                    segment["fin_bwd"] = True
            if flags & RST or (segment["fin_fwd"] and segment["fin_bwd"]):
                segment["closed"] = True
        if segment is not None:
            flows.append(segment)
    return flows


def flow_signature(flow) -> tuple:
    """Comparable signature shared by oracle dicts and FlowRecord objects."""
    if isinstance(flow, dict):
        return (
            flow["initiator"],
            flow["responder"],
            flow["proto"],
            flow["first_ts"],
            flow["fwd_pkts"],
            flow["bwd_pkts"],
            flow["fwd_bytes"],
            flow["bwd_bytes"],
        )
    key = flow.key
    return (
        (key.src_ip, key.src_port),
        (key.dst_ip, key.dst_port),
        key.proto,
        flow.first_ts,
        flow.fwd_pkts,
        flow.bwd_pkts,
        flow.fwd_bytes,
        flow.bwd_bytes,
    )
