"""Attack-window statistics and flow labeling.

Attack windows name an attacker and a victim (IP, CIDR prefix, or VLAN
name) plus a time span; packets and flows match when their endpoints pair
up with the window's endpoints in either orientation and their times
overlap the span inclusively.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from ipaddress import IPv4Address, IPv4Network

from .assembly import FlowRecord
from .capture import PacketMeta

BENIGN_LABEL = "benign"


class WindowParseError(ValueError):
    """Attack-window input is malformed or names an unresolvable endpoint."""


class EmptyWindowError(ValueError):
    """No packet matched the attack window."""


class AmbiguousLabelError(ValueError):
    """More than one attack window matched a single flow."""


@dataclass(frozen=True, slots=True)
class AttackWindow:
    name: str
    attacker: str  # IP, CIDR, or vlan name
    victim: str
    start_ts: int  # epoch microseconds
    end_ts: int


@dataclass(frozen=True, slots=True)
class WindowStats:
    duration_s: float  # 1 decimal
    n_pkts: int
    avg_pps: float  # 2 decimals
    avg_size_b: int


def _to_epoch_us(text: str) -> int:
    moment = datetime.fromisoformat(text)
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return int(round(moment.timestamp() * 1e6))


def load_attack_windows(document: bytes) -> list[AttackWindow]:
    """Load windows from CSV: name,attacker,victim,start_iso8601,end_iso8601."""
    reader = csv.reader(io.StringIO(document.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise WindowParseError("row 1: missing header") from None
    if tuple(header) != ("name", "attacker", "victim", "start_iso8601", "end_iso8601"):
        raise WindowParseError("row 1: header must be name,attacker,victim,start_iso8601,end_iso8601")
    windows = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell for cell in row):
            continue
        if len(row) != 5:
            raise WindowParseError(f"row {row_no}: expected 5 columns")
        try:
            start = _to_epoch_us(row[3].strip())
            end = _to_epoch_us(row[4].strip())
        except ValueError as exc:
            raise WindowParseError(f"row {row_no}: {exc}") from exc
        if start >= end:
            raise WindowParseError(f"row {row_no}: start must precede end")
        windows.append(AttackWindow(row[0].strip(), row[1].strip(), row[2].strip(), start, end))
    return windows


def _endpoint_matcher(token: str, vlans: dict[str, IPv4Network] | None):
    """Build an ip -> bool predicate for an attacker/victim token."""
    try:
        exact = IPv4Address(token)
    except ValueError:
        exact = None
    if exact is not None:
        return lambda ip: ip == exact
    if "/" in token:
        network = IPv4Network(token, strict=False)
        return lambda ip: ip in network
    if vlans and token in vlans:
        network = vlans[token]
        return lambda ip: ip in network
    raise WindowParseError(f"unresolvable endpoint token {token!r} (not an IP, prefix, or known vlan)")


def window_stats(
    packets: list[PacketMeta],
    window: AttackWindow,
    vlans: dict[str, IPv4Network] | None = None,
) -> WindowStats:
    """Packet statistics over a window: span, count, rate, mean size.

    Duration is the span between the first and last matched packet (not
    the window bounds); a single matched packet yields zero duration and,
    by convention, zero pps.
    """
    attacker = _endpoint_matcher(window.attacker, vlans)
    victim = _endpoint_matcher(window.victim, vlans)

    first = last = None
    n_pkts = 0
    total_bytes = 0
    for packet in packets:
        if not window.start_ts <= packet.ts <= window.end_ts:
            continue
        src = IPv4Address(packet.src_ip)
        dst = IPv4Address(packet.dst_ip)
        if not ((attacker(src) and victim(dst)) or (attacker(dst) and victim(src))):
            continue
        if first is None or packet.ts < first:
            first = packet.ts
        if last is None or packet.ts > last:
            last = packet.ts
        n_pkts += 1
        total_bytes += packet.length

    if n_pkts == 0:
        raise EmptyWindowError(f"no packets matched window {window.name!r}")
    duration = (last - first) / 1e6
    avg_pps = round(n_pkts / duration, 2) if duration > 0 else 0.0
    return WindowStats(
        duration_s=round(duration, 1),
        n_pkts=n_pkts,
        avg_pps=avg_pps,
        avg_size_b=round(total_bytes / n_pkts),
    )


def label_flows(
    flows: list[FlowRecord],
    windows: list[AttackWindow],
    vlans: dict[str, IPv4Network] | None = None,
) -> list[FlowRecord]:
    """Label each flow with the matching window's name, else "benign".

    A flow matches a window when its endpoints pair with attacker/victim
    in either orientation and its [first_ts, last_ts] span overlaps the
    window inclusively. Two matching windows for one flow is an error.
    """
    matchers = [
        (w, _endpoint_matcher(w.attacker, vlans), _endpoint_matcher(w.victim, vlans)) for w in windows
    ]
    labeled = []
    for flow in flows:
        src = IPv4Address(flow.key.src_ip)
        dst = IPv4Address(flow.key.dst_ip)
        matches = [
            w
            for w, attacker, victim in matchers
            if flow.first_ts <= w.end_ts
            and flow.last_ts >= w.start_ts
            and ((attacker(src) and victim(dst)) or (attacker(dst) and victim(src)))
        ]
        if len(matches) > 1:
            names = ", ".join(w.name for w in matches)
            raise AmbiguousLabelError(f"flow {flow.key} matches windows: {names}")
        labeled.append(replace(flow, label=matches[0].name if matches else BENIGN_LABEL))
    return labeled
