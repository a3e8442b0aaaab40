"""Declarative testbed configuration: types, loading, validation, mapping.

A TestbedConfig captures everything needed to deploy the emulated network:
bridges, VLANs, routers, firewalls, hosts (with templates and packages),
and the template catalog. Configs are immutable values after load.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from ipaddress import IPv4Address, IPv4Network

from .cpe import CpeUri, MalformedCpe, parse_cpe


class ConfigSyntaxError(ValueError):
    """Config document is syntactically invalid; message carries the path."""


class NoTemplateError(LookupError):
    """No template in the catalog matches the verdict."""


class AmbiguousVerdictError(LookupError):
    """A generation-less verdict matches more than one template."""


class UnmappedCpeError(LookupError):
    """The package mapping table has no entry for the CPE's vendor/product."""


class Severity(Enum):
    ERROR = "Error"
    WARNING = "Warning"


class Action(Enum):
    ALLOW = "allow"
    DENY = "deny"


class Proto(Enum):
    TCP = "tcp"
    UDP = "udp"
    ANY = "any"


@dataclass(frozen=True, slots=True)
class Violation:
    severity: Severity
    path: str
    message: str


@dataclass(frozen=True, slots=True)
class VlanSpec:
    name: str
    cidr: IPv4Network
    bridge: str
    gateway: str | None = None  # device name override for the gateway role


@dataclass(frozen=True, slots=True)
class Interface:
    vlan: str
    ip: IPv4Address
    network: IPv4Network | None = None  # denormalized vlan cidr, set at load


@dataclass(frozen=True, slots=True)
class StaticRoute:
    prefix: IPv4Network
    via: IPv4Address


@dataclass(frozen=True, slots=True)
class RouterSpec:
    name: str
    interfaces: tuple[Interface, ...]
    static_routes: tuple[StaticRoute, ...] = ()


@dataclass(frozen=True, slots=True)
class FirewallRule:
    order: int
    action: Action
    src: IPv4Network
    dst: IPv4Network
    proto: Proto
    dst_port: tuple[int, int] | None = None


@dataclass(frozen=True, slots=True)
class FirewallSpec:
    name: str
    interfaces: tuple[Interface, ...]
    rules: tuple[FirewallRule, ...]
    static_routes: tuple[StaticRoute, ...] = ()


@dataclass(frozen=True, slots=True)
class PackageSpec:
    name: str
    version: str
    origin_cpe: CpeUri | None = None


@dataclass(frozen=True, slots=True)
class Nic:
    vlan: str
    ip: IPv4Address


@dataclass(frozen=True, slots=True)
class HostSpec:
    name: str
    template: str
    nics: tuple[Nic, ...]
    packages: tuple[PackageSpec, ...] = ()
    agent_profile: str | None = None
    node: str | None = None


@dataclass(frozen=True, slots=True)
class TemplateSpec:
    id: str
    os: str
    family: str
    generation: str = ""


@dataclass(frozen=True, slots=True)
class TestbedConfig:
    bridges: tuple[str, ...]
    vlans: tuple[VlanSpec, ...]
    routers: tuple[RouterSpec, ...]
    firewalls: tuple[FirewallSpec, ...]
    hosts: tuple[HostSpec, ...]
    templates: tuple[TemplateSpec, ...]

    def vlan_map(self) -> dict[str, VlanSpec]:
        return {v.name: v for v in self.vlans}

    def template_map(self) -> dict[str, TemplateSpec]:
        return {t.id: t for t in self.templates}

    def host_map(self) -> dict[str, HostSpec]:
        return {h.name: h for h in self.hosts}

    def devices(self) -> tuple[RouterSpec | FirewallSpec, ...]:
        """Routers and firewalls, in declaration order (routers first)."""
        return self.routers + self.firewalls


# ---------------------------------------------------------------------------
# Loading and saving


def _expect(value, kind, path: str):
    if not isinstance(value, kind):
        raise ConfigSyntaxError(f"{path}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_ip(value, path: str) -> IPv4Address:
    try:
        return IPv4Address(_expect(value, str, path))
    except ValueError as exc:
        raise ConfigSyntaxError(f"{path}: {exc}") from exc


def _parse_network(value, path: str) -> IPv4Network:
    try:
        return IPv4Network(_expect(value, str, path), strict=True)
    except ValueError as exc:
        raise ConfigSyntaxError(f"{path}: {exc}") from exc


def _unique(names, path: str, what: str) -> None:
    seen = set()
    for name in names:
        if name in seen:
            raise ConfigSyntaxError(f"{path}: duplicate {what} {name!r}")
        seen.add(name)


def _parse_interfaces(raw, path: str, vlan_cidrs: dict[str, IPv4Network]) -> tuple[Interface, ...]:
    interfaces = []
    for i, item in enumerate(_expect(raw, list, path)):
        ipath = f"{path}[{i}]"
        item = _expect(item, dict, ipath)
        vlan = _expect(item.get("vlan"), str, f"{ipath}.vlan")
        ip = _parse_ip(item.get("ip"), f"{ipath}.ip")
        interfaces.append(Interface(vlan=vlan, ip=ip, network=vlan_cidrs.get(vlan)))
    return tuple(interfaces)


def _parse_static_routes(raw, path: str) -> tuple[StaticRoute, ...]:
    routes = []
    for i, item in enumerate(_expect(raw, list, path)):
        rpath = f"{path}[{i}]"
        item = _expect(item, dict, rpath)
        routes.append(
            StaticRoute(
                prefix=_parse_network(item.get("prefix"), f"{rpath}.prefix"),
                via=_parse_ip(item.get("via"), f"{rpath}.via"),
            )
        )
    return tuple(routes)


def _parse_rules(raw, path: str) -> tuple[FirewallRule, ...]:
    rules = []
    for i, item in enumerate(_expect(raw, list, path)):
        rpath = f"{path}[{i}]"
        item = _expect(item, dict, rpath)
        try:
            action = Action(_expect(item.get("action"), str, f"{rpath}.action"))
        except ValueError:
            raise ConfigSyntaxError(f"{rpath}.action: must be allow or deny") from None
        try:
            proto = Proto(_expect(item.get("proto", "any"), str, f"{rpath}.proto"))
        except ValueError:
            raise ConfigSyntaxError(f"{rpath}.proto: must be tcp, udp or any") from None
        dst_port = item.get("dst_port")
        if dst_port is not None:
            if isinstance(dst_port, int):
                dst_port = (dst_port, dst_port)
            elif isinstance(dst_port, list) and len(dst_port) == 2:
                dst_port = (int(dst_port[0]), int(dst_port[1]))
            else:
                raise ConfigSyntaxError(f"{rpath}.dst_port: expected int or [low, high]")
        rules.append(
            FirewallRule(
                order=_expect(item.get("order"), int, f"{rpath}.order"),
                action=action,
                src=_parse_network(item.get("src"), f"{rpath}.src"),
                dst=_parse_network(item.get("dst"), f"{rpath}.dst"),
                proto=proto,
                dst_port=dst_port,
            )
        )
    return tuple(rules)


def load_config(document: bytes) -> TestbedConfig:
    """Parse a JSON testbed config; syntax only, no semantic validation."""
    try:
        raw = json.loads(document.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigSyntaxError(f"document: {exc}") from exc
    raw = _expect(raw, dict, "document")

    bridges = tuple(_expect(b, str, f"bridges[{i}]") for i, b in enumerate(_expect(raw.get("bridges", []), list, "bridges")))
    _unique(bridges, "bridges", "bridge")

    vlans = []
    for i, item in enumerate(_expect(raw.get("vlans", []), list, "vlans")):
        path = f"vlans[{i}]"
        item = _expect(item, dict, path)
        gateway = item.get("gateway")
        if gateway is not None:
            gateway = _expect(gateway, str, f"{path}.gateway")
        vlans.append(
            VlanSpec(
                name=_expect(item.get("name"), str, f"{path}.name"),
                cidr=_parse_network(item.get("cidr"), f"{path}.cidr"),
                bridge=_expect(item.get("bridge"), str, f"{path}.bridge"),
                gateway=gateway,
            )
        )
    _unique((v.name for v in vlans), "vlans", "vlan name")
    vlan_cidrs = {v.name: v.cidr for v in vlans}

    routers = []
    for i, item in enumerate(_expect(raw.get("routers", []), list, "routers")):
        path = f"routers[{i}]"
        item = _expect(item, dict, path)
        routers.append(
            RouterSpec(
                name=_expect(item.get("name"), str, f"{path}.name"),
                interfaces=_parse_interfaces(item.get("interfaces", []), f"{path}.interfaces", vlan_cidrs),
                static_routes=_parse_static_routes(item.get("static_routes", []), f"{path}.static_routes"),
            )
        )

    firewalls = []
    for i, item in enumerate(_expect(raw.get("firewalls", []), list, "firewalls")):
        path = f"firewalls[{i}]"
        item = _expect(item, dict, path)
        firewalls.append(
            FirewallSpec(
                name=_expect(item.get("name"), str, f"{path}.name"),
                interfaces=_parse_interfaces(item.get("interfaces", []), f"{path}.interfaces", vlan_cidrs),
                rules=_parse_rules(item.get("rules", []), f"{path}.rules"),
                static_routes=_parse_static_routes(item.get("static_routes", []), f"{path}.static_routes"),
            )
        )
    _unique((d.name for d in routers + firewalls), "routers/firewalls", "device name")

    hosts = []
    for i, item in enumerate(_expect(raw.get("hosts", []), list, "hosts")):
        path = f"hosts[{i}]"
        item = _expect(item, dict, path)
        nics = []
        for j, nic in enumerate(_expect(item.get("nics", []), list, f"{path}.nics")):
            npath = f"{path}.nics[{j}]"
            nic = _expect(nic, dict, npath)
            nics.append(Nic(vlan=_expect(nic.get("vlan"), str, f"{npath}.vlan"), ip=_parse_ip(nic.get("ip"), f"{npath}.ip")))
        packages = []
        for j, pkg in enumerate(_expect(item.get("packages", []), list, f"{path}.packages")):
            ppath = f"{path}.packages[{j}]"
            pkg = _expect(pkg, dict, ppath)
            origin = pkg.get("origin_cpe")
            origin_cpe = None
            if origin:
                try:
                    origin_cpe = parse_cpe(_expect(origin, str, f"{ppath}.origin_cpe"))
                except MalformedCpe as exc:
                    raise ConfigSyntaxError(f"{ppath}.origin_cpe: {exc}") from exc
            packages.append(
                PackageSpec(
                    name=_expect(pkg.get("name"), str, f"{ppath}.name"),
                    version=_expect(pkg.get("version"), str, f"{ppath}.version"),
                    origin_cpe=origin_cpe,
                )
            )
        agent_profile = item.get("agent_profile")
        if agent_profile is not None:
            agent_profile = _expect(agent_profile, str, f"{path}.agent_profile")
        node = item.get("node")
        if node is not None:
            node = _expect(node, str, f"{path}.node")
        hosts.append(
            HostSpec(
                name=_expect(item.get("name"), str, f"{path}.name"),
                template=_expect(item.get("template"), str, f"{path}.template"),
                nics=tuple(nics),
                packages=tuple(packages),
                agent_profile=agent_profile,
                node=node,
            )
        )
    _unique((h.name for h in hosts), "hosts", "host name")

    templates = []
    for i, item in enumerate(_expect(raw.get("templates", []), list, "templates")):
        path = f"templates[{i}]"
        item = _expect(item, dict, path)
        templates.append(
            TemplateSpec(
                id=_expect(item.get("id"), str, f"{path}.id"),
                os=_expect(item.get("os"), str, f"{path}.os"),
                family=_expect(item.get("family"), str, f"{path}.family"),
                generation=_expect(item.get("generation", ""), str, f"{path}.generation"),
            )
        )
    _unique((t.id for t in templates), "templates", "template id")

    return TestbedConfig(
        bridges=bridges,
        vlans=tuple(vlans),
        routers=tuple(routers),
        firewalls=tuple(firewalls),
        hosts=tuple(hosts),
        templates=tuple(templates),
    )


def save_config(cfg: TestbedConfig) -> bytes:
    """Serialize a config back to its JSON document form."""

    def interface(i: Interface) -> dict:
        return {"vlan": i.vlan, "ip": str(i.ip)}

    def routes(rs) -> list:
        return [{"prefix": str(r.prefix), "via": str(r.via)} for r in rs]

    doc = {
        "bridges": list(cfg.bridges),
        "vlans": [
            {k: v for k, v in {
                "name": v_.name, "cidr": str(v_.cidr), "bridge": v_.bridge, "gateway": v_.gateway,
            }.items() if v is not None}
            for v_ in cfg.vlans
        ],
        "routers": [
            {"name": r.name, "interfaces": [interface(i) for i in r.interfaces], "static_routes": routes(r.static_routes)}
            for r in cfg.routers
        ],
        "firewalls": [
            {
                "name": f.name,
                "interfaces": [interface(i) for i in f.interfaces],
                "static_routes": routes(f.static_routes),
                "rules": [
                    {k: v for k, v in {
                        "order": r.order,
                        "action": r.action.value,
                        "src": str(r.src),
                        "dst": str(r.dst),
                        "proto": r.proto.value,
                        "dst_port": list(r.dst_port) if r.dst_port else None,
                    }.items() if v is not None}
                    for r in f.rules
                ],
            }
            for f in cfg.firewalls
        ],
        "hosts": [
            {k: v for k, v in {
                "name": h.name,
                "template": h.template,
                "nics": [{"vlan": n.vlan, "ip": str(n.ip)} for n in h.nics],
                "packages": [
                    {k2: v2 for k2, v2 in {
                        "name": p.name,
                        "version": p.version,
                        "origin_cpe": str(p.origin_cpe) if p.origin_cpe else None,
                    }.items() if v2 is not None}
                    for p in h.packages
                ],
                "agent_profile": h.agent_profile,
                "node": h.node,
            }.items() if v is not None}
            for h in cfg.hosts
        ],
        "templates": [
            {"id": t.id, "os": t.os, "family": t.family, "generation": t.generation} for t in cfg.templates
        ],
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Validation


def validate_config(cfg: TestbedConfig) -> list[Violation]:
    """Check referential integrity and addressing rules.

    Returns a deterministic, path-sorted list of violations; empty means
    the config is deployable.
    """
    violations: list[Violation] = []

    def err(path: str, msg: str) -> None:
        violations.append(Violation(Severity.ERROR, path, msg))

    bridges = set(cfg.bridges)
    vlans = cfg.vlan_map()
    templates = cfg.template_map()
    device_names = {d.name for d in cfg.devices()}

    for vlan in cfg.vlans:
        path = f"vlans[{vlan.name}]"
        if vlan.bridge not in bridges:
            err(f"{path}.bridge", f"unresolved bridge {vlan.bridge!r}")
        if vlan.gateway is not None and vlan.gateway not in device_names:
            err(f"{path}.gateway", f"unresolved device {vlan.gateway!r}")

    seen_ips: dict[IPv4Address, str] = {}

    def check_interfaces(owner: str, interfaces: tuple[Interface, ...]) -> None:
        per_vlan: set[str] = set()
        for idx, itf in enumerate(interfaces):
            path = f"{owner}.interfaces[{idx}]"
            vlan = vlans.get(itf.vlan)
            if vlan is None:
                err(f"{path}.vlan", f"unresolved vlan {itf.vlan!r}")
                continue
            if itf.vlan in per_vlan:
                err(f"{path}.vlan", f"second interface in vlan {itf.vlan!r}")
            per_vlan.add(itf.vlan)
            if itf.ip not in vlan.cidr:
                err(f"{path}.ip", f"ip {itf.ip} outside vlan cidr {vlan.cidr}")
            if itf.ip in seen_ips:
                err(f"{path}.ip", f"ip {itf.ip} already used by {seen_ips[itf.ip]}")
            else:
                seen_ips[itf.ip] = owner

    for router in cfg.routers:
        check_interfaces(f"routers[{router.name}]", router.interfaces)
    for fw in cfg.firewalls:
        owner = f"firewalls[{fw.name}]"
        check_interfaces(owner, fw.interfaces)
        orders = [r.order for r in fw.rules]
        if len(orders) != len(set(orders)):
            err(f"{owner}.rules", "rule order values not unique")
        for idx, rule in enumerate(fw.rules):
            if rule.dst_port is not None:
                low, high = rule.dst_port
                if not (1 <= low <= high <= 65535):
                    err(f"{owner}.rules[{idx}].dst_port", f"bad port range {low}-{high}")

    for host in cfg.hosts:
        path = f"hosts[{host.name}]"
        if host.template not in templates:
            err(f"{path}.template", f"unresolved template {host.template!r}")
        for idx, nic in enumerate(host.nics):
            npath = f"{path}.nics[{idx}]"
            vlan = vlans.get(nic.vlan)
            if vlan is None:
                err(f"{npath}.vlan", f"unresolved vlan {nic.vlan!r}")
                continue
            if nic.ip not in vlan.cidr:
                err(f"{npath}.ip", f"ip {nic.ip} outside vlan cidr {vlan.cidr}")
            if nic.ip in seen_ips:
                err(f"{npath}.ip", f"ip {nic.ip} already used by {seen_ips[nic.ip]}")
            else:
                seen_ips[nic.ip] = path

    violations.sort(key=lambda v: (v.path, v.message))
    return violations


# ---------------------------------------------------------------------------
# Template and package mapping


def _fold(value: str | None) -> str:
    return (value or "").casefold()


def map_host_to_template(verdict, catalog: tuple[TemplateSpec, ...]) -> str:
    """Pick the template id matching a verdict's (os, family, generation).

    Generation-bearing catalog entries require an exact generation match;
    entries without one match at the family level. A generation-less
    verdict facing several same-family templates is ambiguous.
    """
    candidates = [
        t
        for t in catalog
        if _fold(t.os) == _fold(verdict.os) and _fold(t.family) == _fold(verdict.family)
    ]
    if not candidates:
        raise NoTemplateError(f"no template for os={verdict.os!r} family={verdict.family!r}")
    if verdict.generation is not None:
        exact = [t for t in candidates if _fold(t.generation) == _fold(verdict.generation)]
        if len(exact) == 1:
            return exact[0].id
        if len(exact) > 1:
            raise AmbiguousVerdictError(f"multiple templates for generation {verdict.generation!r}")
        unversioned = [t for t in candidates if not t.generation]
        if len(unversioned) == 1:
            return unversioned[0].id
        if len(unversioned) > 1:
            raise AmbiguousVerdictError(f"multiple family-level templates for {verdict.family!r}")
        raise NoTemplateError(
            f"no template for os={verdict.os!r} family={verdict.family!r} generation={verdict.generation!r}"
        )
    if len(candidates) > 1:
        raise AmbiguousVerdictError(
            f"verdict has no generation and {len(candidates)} templates match family {verdict.family!r}"
        )
    return candidates[0].id


def load_package_mapping(document: bytes) -> dict[tuple[str, str], str]:
    """Load the (vendor, product) -> package name table from CSV."""
    reader = csv.reader(io.StringIO(document.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigSyntaxError("mapping: missing header") from None
    if tuple(header) != ("vendor", "product", "package"):
        raise ConfigSyntaxError("mapping: header must be vendor,product,package")
    table: dict[tuple[str, str], str] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c for c in row):
            continue
        if len(row) != 3:
            raise ConfigSyntaxError(f"mapping row {row_no}: expected 3 columns")
        table[(row[0].strip(), row[1].strip())] = row[2].strip()
    return table


def _version_components(version: str) -> list[int]:
    components = []
    for part in version.split("."):
        match = re.match(r"\d+", part)
        components.append(int(match.group()) if match else 0)
    return components


def cpe_to_package(
    cpe: CpeUri,
    mapping: dict[tuple[str, str], str],
    available_versions: list[str],
) -> PackageSpec:
    """Resolve an application CPE to an installable package and version.

    An exact version string wins; otherwise the closest available version
    under left-to-right numeric component distance, ties broken toward the
    lower version.
    """
    if not available_versions:
        raise ValueError("available_versions must be non-empty")
    name = mapping.get((cpe.vendor, cpe.product))
    if name is None:
        raise UnmappedCpeError(f"no package mapping for ({cpe.vendor}, {cpe.product})")
    target = cpe.version or ""
    if target in available_versions:
        return PackageSpec(name=name, version=target, origin_cpe=cpe)

    target_components = _version_components(target)
    width = max(
        len(target_components),
        max(len(_version_components(v)) for v in available_versions),
    )

    def pad(components: list[int]) -> list[int]:
        return components + [0] * (width - len(components))

    padded_target = pad(target_components)

    def rank(candidate: str):
        components = pad(_version_components(candidate))
        distance = tuple(abs(a - b) for a, b in zip(padded_target, components))
        return (distance, components, candidate)

    best = min(available_versions, key=rank)
    return PackageSpec(name=name, version=best, origin_cpe=cpe)


def with_host_nodes(cfg: TestbedConfig, assignments: dict[str, str]) -> TestbedConfig:
    """A copy of cfg with node assignments applied per host name."""
    hosts = tuple(
        replace(h, node=assignments.get(h.name, h.node)) for h in cfg.hosts
    )
    return replace(cfg, hosts=hosts)
