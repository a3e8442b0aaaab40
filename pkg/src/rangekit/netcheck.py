"""Static L3 reachability analysis over a testbed config.

Routing is simulated hop by hop: each VLAN's gateway device forwards via
longest-prefix match over connected networks and static routes, firewalls
additionally apply their first-match rule chains, and traces terminate on
delivery, a missing route, a denial, or a revisited forwarding state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address

from .model import Action, FirewallSpec, Proto, RouterSpec, TestbedConfig, VlanSpec

HOP_LIMIT = 32


class UnknownSourceError(ValueError):
    """Trace source address belongs to no VLAN in the config."""


class RouteKind(Enum):
    CONNECTED = "connected"
    STATIC = "static"
    NONE = "none"


@dataclass(frozen=True, slots=True)
class RouteDecision:
    kind: RouteKind
    vlan: str | None = None
    via: IPv4Address | None = None


class PathVerdict(Enum):
    REACHABLE = "Reachable"
    NO_ROUTE = "NoRoute"
    FIREWALL_DENIED = "FirewallDenied"
    LOOP = "Loop"


@dataclass(frozen=True, slots=True)
class Hop:
    device: str
    ingress_vlan: str | None
    egress_vlan: str | None


@dataclass(frozen=True, slots=True)
class Path:
    verdict: PathVerdict
    hops: tuple[Hop, ...]


def resolve_route(device: RouterSpec | FirewallSpec, dst: IPv4Address) -> RouteDecision:
    """Longest-prefix match over connected networks and static routes.

    Connected networks win ties at equal prefix length; within a kind the
    first declared entry wins.
    """
    best: RouteDecision | None = None
    best_rank: tuple[int, int] = (-1, -1)  # (prefixlen, kind preference)
    for interface in device.interfaces:
        if interface.network is not None and dst in interface.network:
            rank = (interface.network.prefixlen, 1)
            if rank > best_rank:
                best_rank = rank
                best = RouteDecision(RouteKind.CONNECTED, vlan=interface.vlan)
    for route in device.static_routes:
        if dst in route.prefix:
            rank = (route.prefix.prefixlen, 0)
            if rank > best_rank:
                best_rank = rank
                best = RouteDecision(RouteKind.STATIC, via=route.via)
    return best if best is not None else RouteDecision(RouteKind.NONE)


def _vlan_containing(cfg: TestbedConfig, ip: IPv4Address) -> VlanSpec | None:
    best = None
    for vlan in cfg.vlans:
        if ip in vlan.cidr and (best is None or vlan.cidr.prefixlen > best.cidr.prefixlen):
            best = vlan
    return best


def gateway_device(cfg: TestbedConfig, vlan: VlanSpec) -> RouterSpec | FirewallSpec | None:
    """The device acting as default gateway for a VLAN.

    An explicit ``gateway`` override on the VLAN wins; otherwise the device
    with the lowest interface IP inside the VLAN.
    """
    candidates = [
        (interface.ip, device)
        for device in cfg.devices()
        for interface in device.interfaces
        if interface.vlan == vlan.name
    ]
    if not candidates:
        return None
    if vlan.gateway is not None:
        for _, device in candidates:
            if device.name == vlan.gateway:
                return device
        return None
    return min(candidates, key=lambda c: c[0])[1]


def _rules_allow(
    fw: FirewallSpec,
    src: IPv4Address,
    dst: IPv4Address,
    proto: Proto,
    dst_port: int | None,
) -> bool:
    """First-match rule evaluation; no match means deny."""
    for rule in sorted(fw.rules, key=lambda r: r.order):
        if src not in rule.src or dst not in rule.dst:
            continue
        if not (rule.proto is Proto.ANY or proto is Proto.ANY or rule.proto is proto):
            continue
        if rule.dst_port is not None:
            if dst_port is None or not rule.dst_port[0] <= dst_port <= rule.dst_port[1]:
                continue
        return rule.action is Action.ALLOW
    return False


def trace_path(
    cfg: TestbedConfig,
    src: IPv4Address | str,
    dst: IPv4Address | str,
    proto: Proto = Proto.ANY,
    dst_port: int | None = None,
) -> Path:
    """Simulate a one-way packet from src to dst through the L3 fabric."""
    src = IPv4Address(src)
    dst = IPv4Address(dst)
    src_vlan = _vlan_containing(cfg, src)
    if src_vlan is None:
        raise UnknownSourceError(f"source {src} is in no vlan")

    if dst in src_vlan.cidr:
        # Delivered inside the VLAN itself; the pseudo-hop names the segment.
        return Path(PathVerdict.REACHABLE, (Hop(f"vlan:{src_vlan.name}", src_vlan.name, src_vlan.name),))

    device = gateway_device(cfg, src_vlan)
    if device is None:
        return Path(PathVerdict.NO_ROUTE, ())

    device_by_ip = {
        interface.ip: dev for dev in cfg.devices() for interface in dev.interfaces
    }

    hops: list[Hop] = []
    ingress = src_vlan.name
    seen: set[tuple[str, str | None]] = set()
    for _ in range(HOP_LIMIT):
        if isinstance(device, FirewallSpec) and not _rules_allow(device, src, dst, proto, dst_port):
            hops.append(Hop(device.name, ingress, None))
            return Path(PathVerdict.FIREWALL_DENIED, tuple(hops))
        decision = resolve_route(device, dst)
        if decision.kind is RouteKind.NONE:
            hops.append(Hop(device.name, ingress, None))
            return Path(PathVerdict.NO_ROUTE, tuple(hops))
        if decision.kind is RouteKind.CONNECTED:
            hops.append(Hop(device.name, ingress, decision.vlan))
            return Path(PathVerdict.REACHABLE, tuple(hops))
        egress = next(
            (i.vlan for i in device.interfaces if i.network is not None and decision.via in i.network),
            None,
        )
        if egress is None:
            hops.append(Hop(device.name, ingress, None))
            return Path(PathVerdict.NO_ROUTE, tuple(hops))
        state = (device.name, egress)
        if state in seen:
            hops.append(Hop(device.name, ingress, egress))
            return Path(PathVerdict.LOOP, tuple(hops))
        seen.add(state)
        next_device = device_by_ip.get(decision.via)
        hops.append(Hop(device.name, ingress, egress))
        if next_device is None:
            return Path(PathVerdict.NO_ROUTE, tuple(hops))
        ingress = egress
        device = next_device
    return Path(PathVerdict.LOOP, tuple(hops))


def reachability_matrix(
    cfg: TestbedConfig,
    endpoints: list[IPv4Address | str],
    proto: Proto = Proto.ANY,
    dst_port: int | None = None,
) -> list[list[PathVerdict]]:
    """Pairwise trace verdicts; the diagonal is Reachable by definition."""
    if len(endpoints) > 64:
        raise ValueError("endpoint list capped at 64")
    addrs = [IPv4Address(e) for e in endpoints]
    matrix = []
    for i, src in enumerate(addrs):
        row = []
        for j, dst in enumerate(addrs):
            if i == j:
                row.append(PathVerdict.REACHABLE)
            else:
                row.append(trace_path(cfg, src, dst, proto, dst_port).verdict)
        matrix.append(row)
    return matrix
