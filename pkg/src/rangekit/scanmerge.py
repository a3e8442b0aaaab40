"""Scanner-report ingestion and OS-verdict consolidation.

Nmap XML and normalized OpenVAS CSV reports are parsed into per-host
observations; :func:`consolidate` merges the two sides into a single OS
verdict, preferring OpenVAS for distribution-level detail and Nmap for
version-bearing fingerprints OpenVAS lacks.
"""

from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address

from .cpe import (
    GENERIC_PRODUCTS,
    CpeUri,
    MalformedCpe,
    Part,
    effective_version,
    is_generic_cpe,
    is_windows_xp,
    os_identity,
    parse_cpe,
)


class ReportParseError(ValueError):
    """A scanner report is malformed; the message names the location."""


class Source(Enum):
    NMAP = "nmap"
    OPENVAS = "openvas"


class Outcome(Enum):
    OPENVAS_WITH_VERSION = "UseOpenVASWithVersion"
    NMAP_WITH_VERSION = "UseNmapWithVersion"
    OPENVAS_AND_NMAP = "UseOpenVASAndNmap"
    OPENVAS_ONLY = "UseOpenVASOnly"
    NMAP_ONLY = "UseNmapOnly"
    FAIL = "Fail"


#: Outcomes that carry an OS generation.
GENERATION_OUTCOMES = frozenset(
    {Outcome.OPENVAS_WITH_VERSION, Outcome.NMAP_WITH_VERSION, Outcome.OPENVAS_AND_NMAP}
)


@dataclass(frozen=True, slots=True)
class OsObservation:
    """One scanner's view of a host's operating system."""

    source: Source
    cpes: tuple[CpeUri, ...] = ()
    accuracy: int | None = None
    os: str | None = None
    vendor: str | None = None
    family: str | None = None
    generation: str | None = None


@dataclass(frozen=True, slots=True)
class ServiceObservation:
    port: int
    proto: str  # "TCP" | "UDP"
    name: str
    version: str | None = None
    cpe: CpeUri | None = None


@dataclass(frozen=True, slots=True)
class HostScanEntry:
    ip: str
    nmap: OsObservation | None = None
    openvas: OsObservation | None = None
    services: tuple[ServiceObservation, ...] = ()
    vulns: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True, slots=True)
class OsVerdict:
    outcome: Outcome
    os: str | None = None
    vendor: str | None = None
    family: str | None = None
    generation: str | None = None


@dataclass(frozen=True, slots=True)
class CoverageReport:
    total: int
    with_generation: int
    fraction: float | None


def _usable_cpes(obs: OsObservation | None) -> tuple[CpeUri, ...]:
    """OS CPEs of an observation, with Windows XP matches dropped."""
    if obs is None:
        return ()
    seen: list[CpeUri] = []
    for cpe in obs.cpes:
        if cpe.part is not Part.OS or is_windows_xp(cpe):
            continue
        if cpe not in seen:
            seen.append(cpe)
    return tuple(seen)


def _text_identity(obs: OsObservation | None, cpes: tuple[CpeUri, ...]):
    """(os, vendor, family) from an observation's text fields, CPE-backed.

    Returns None when the observation carries no OS identity at all.
    """
    if obs is None:
        return None
    os_name, vendor, family = obs.os, obs.vendor, obs.family
    if cpes:
        ident = os_identity(cpes[0])
        os_name = os_name or ident.os
        vendor = vendor or ident.vendor
        family = family or ident.family
    if os_name is None and vendor is None and family is None:
        return None
    return os_name, vendor, family


def consolidate(nmap: OsObservation | None, openvas: OsObservation | None) -> OsVerdict:
    """Merge per-host Nmap and OpenVAS observations into one OS verdict.

    Decision flow, in priority order:

    1. OpenVAS holds exactly one version-bearing, non-generic OS CPE:
       take the verdict entirely from that CPE.
    2. Otherwise, Nmap holds exactly one such CPE and every OpenVAS CPE
       (if any) belongs to a too-general product category: take Nmap's.
    3. Otherwise, OpenVAS holds a single CPE naming a concrete product but
       no version while Nmap can pin one: OS and vendor come from OpenVAS,
       family and generation from Nmap.
    4./5. A side still carries OS/vendor/family identity (text fields or
       leftover CPEs): report it without a generation, OpenVAS first.
    6. Neither side knows anything: Fail.

    A source holding multiple equally-ranked CPEs never contributes a
    generation (rules 1-3 require exactly one), so such observations fall
    through to the generation-less outcomes. Windows XP CPEs are treated
    as absent throughout.
    """
    ov_cpes = _usable_cpes(openvas)
    nm_cpes = _usable_cpes(nmap)

    if len(ov_cpes) == 1 and not is_generic_cpe(ov_cpes[0]):
        ident = os_identity(ov_cpes[0])
        return OsVerdict(Outcome.OPENVAS_WITH_VERSION, ident.os, ident.vendor, ident.family, ident.generation)

    nm_versioned = len(nm_cpes) == 1 and not is_generic_cpe(nm_cpes[0])
    if nm_versioned and all(c.product in GENERIC_PRODUCTS for c in ov_cpes):
        ident = os_identity(nm_cpes[0])
        return OsVerdict(Outcome.NMAP_WITH_VERSION, ident.os, ident.vendor, ident.family, ident.generation)

    if (
        nm_versioned
        and len(ov_cpes) == 1
        and ov_cpes[0].product not in GENERIC_PRODUCTS
        and effective_version(ov_cpes[0]) is None
    ):
        ov_ident = os_identity(ov_cpes[0])
        nm_ident = os_identity(nm_cpes[0])
        return OsVerdict(Outcome.OPENVAS_AND_NMAP, ov_ident.os, ov_ident.vendor, nm_ident.family, nm_ident.generation)

    for obs, cpes, outcome in (
        (openvas, ov_cpes, Outcome.OPENVAS_ONLY),
        (nmap, nm_cpes, Outcome.NMAP_ONLY),
    ):
        identity = _text_identity(obs, cpes)
        if identity is not None:
            os_name, vendor, family = identity
            return OsVerdict(outcome, os_name, vendor, family, None)

    return OsVerdict(Outcome.FAIL)


def coverage_stats(verdicts: list[OsVerdict]) -> CoverageReport:
    """Fraction of non-Fail verdicts that pinned an OS generation."""
    usable = [v for v in verdicts if v.outcome is not Outcome.FAIL]
    with_generation = sum(1 for v in usable if v.generation is not None)
    total = len(usable)
    fraction = with_generation / total if total else None
    return CoverageReport(total, with_generation, fraction)


# ---------------------------------------------------------------------------
# Nmap XML reports


def parse_nmap_report(document: bytes) -> list[HostScanEntry]:
    """Parse an Nmap XML report (``-O -oX``) into per-host entries.

    For each host, the OS observation keeps the CPEs of every osmatch tied
    at the maximum accuracy; service observations come from open ports with
    a service element.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise ReportParseError(f"invalid XML: {exc}") from exc

    entries = []
    for h_idx, host in enumerate(root.iter("host")):
        path = f"host[{h_idx}]"
        address = None
        for addr in host.findall("address"):
            if addr.get("addrtype") == "ipv4":
                address = addr.get("addr")
                break
        if not address:
            continue
        try:
            IPv4Address(address)
        except ValueError:
            raise ReportParseError(f"{path}/address: bad ipv4 address {address!r}") from None
        observation = _nmap_os_observation(host, path)
        services = _nmap_services(host, path)
        entries.append(HostScanEntry(ip=address, nmap=observation, services=services))
    return entries


def _nmap_os_observation(host: ET.Element, path: str) -> OsObservation:
    matches = host.findall("./os/osmatch")
    if not matches:
        return OsObservation(source=Source.NMAP)

    accuracies = []
    for m_idx, match in enumerate(matches):
        raw = match.get("accuracy")
        try:
            accuracy = int(raw) if raw is not None else 0
        except ValueError:
            raise ReportParseError(f"{path}/os/osmatch[{m_idx}]: bad accuracy {raw!r}") from None
        if not 0 <= accuracy <= 100:
            raise ReportParseError(f"{path}/os/osmatch[{m_idx}]: accuracy {accuracy} out of range")
        accuracies.append(accuracy)
    best = max(accuracies)
    tied = [m for m, a in zip(matches, accuracies) if a == best]

    cpes: list[CpeUri] = []
    for m_idx, match in enumerate(tied):
        for cpe_el in match.iter("cpe"):
            text = (cpe_el.text or "").strip()
            if not text:
                continue
            try:
                cpe = parse_cpe(text)
            except MalformedCpe as exc:
                raise ReportParseError(f"{path}/os/osmatch[{m_idx}]/cpe: {exc}") from exc
            if cpe.part is Part.OS and cpe not in cpes:
                cpes.append(cpe)

    osclass = tied[0].find("osclass")
    os_name = family = generation = vendor = None
    if osclass is not None:
        vendor = osclass.get("vendor") or None
        family = osclass.get("osfamily") or None
        generation = osclass.get("osgen") or None
        os_name = family
    return OsObservation(
        source=Source.NMAP,
        cpes=tuple(cpes),
        accuracy=best,
        os=os_name,
        vendor=vendor,
        family=family,
        generation=generation,
    )


def _nmap_services(host: ET.Element, path: str) -> tuple[ServiceObservation, ...]:
    services: list[ServiceObservation] = []
    seen: set[tuple[int, str]] = set()
    for p_idx, port in enumerate(host.findall("./ports/port")):
        proto = (port.get("protocol") or "").upper()
        if proto not in ("TCP", "UDP"):
            continue
        raw_port = port.get("portid")
        try:
            portid = int(raw_port or "")
        except ValueError:
            raise ReportParseError(f"{path}/ports/port[{p_idx}]: bad portid {raw_port!r}") from None
        if not 1 <= portid <= 65535:
            raise ReportParseError(f"{path}/ports/port[{p_idx}]: portid {portid} out of range")
        service = port.find("service")
        if service is None or not service.get("name"):
            continue
        if (portid, proto) in seen:
            raise ReportParseError(f"{path}/ports/port[{p_idx}]: duplicate ({portid}, {proto})")
        seen.add((portid, proto))
        cpe = None
        cpe_el = service.find("cpe")
        if cpe_el is not None and cpe_el.text:
            try:
                cpe = parse_cpe(cpe_el.text.strip())
            except MalformedCpe as exc:
                raise ReportParseError(f"{path}/ports/port[{p_idx}]/service/cpe: {exc}") from exc
        services.append(
            ServiceObservation(
                port=portid,
                proto=proto,
                name=service.get("name", ""),
                version=service.get("version") or None,
                cpe=cpe,
            )
        )
    return tuple(services)


# ---------------------------------------------------------------------------
# Normalized OpenVAS CSV reports

OPENVAS_COLUMNS = (
    "ip",
    "os_cpe",
    "os",
    "family",
    "generation",
    "vendor",
    "cve_id",
    "severity",
    "port",
    "proto",
    "service",
    "service_version",
    "service_cpe",
)


class _HostAccumulator:
    __slots__ = ("cpes", "os", "family", "generation", "vendor", "services", "vulns", "service_keys")

    def __init__(self) -> None:
        self.cpes: list[CpeUri] = []
        self.os: str | None = None
        self.family: str | None = None
        self.generation: str | None = None
        self.vendor: str | None = None
        self.services: list[ServiceObservation] = []
        self.vulns: list[tuple[str, float]] = []
        self.service_keys: set[tuple[int, str]] = set()


def parse_openvas_report(document: bytes) -> list[HostScanEntry]:
    """Parse the normalized OpenVAS CSV interchange format.

    One row per fact; rows for the same IP are merged into a single entry
    holding the union of OS CPEs, services, and vulnerabilities.
    """
    text = document.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ReportParseError("row 1: missing header") from None
    if tuple(header) != OPENVAS_COLUMNS:
        raise ReportParseError(f"row 1: header must be exactly {','.join(OPENVAS_COLUMNS)}")

    hosts: dict[str, _HostAccumulator] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell for cell in row):
            continue
        if len(row) != len(OPENVAS_COLUMNS):
            raise ReportParseError(f"row {row_no}: expected {len(OPENVAS_COLUMNS)} columns, got {len(row)}")
        record = dict(zip(OPENVAS_COLUMNS, (cell.strip() for cell in row)))
        ip = record["ip"]
        if not ip:
            raise ReportParseError(f"row {row_no}, column ip: empty")
        try:
            IPv4Address(ip)
        except ValueError:
            raise ReportParseError(f"row {row_no}, column ip: bad ipv4 address {ip!r}") from None
        acc = hosts.setdefault(ip, _HostAccumulator())
        _merge_openvas_row(acc, record, row_no)

    return [
        HostScanEntry(
            ip=ip,
            openvas=OsObservation(
                source=Source.OPENVAS,
                cpes=tuple(acc.cpes),
                os=acc.os,
                family=acc.family,
                generation=acc.generation,
                vendor=acc.vendor,
            ),
            services=tuple(acc.services),
            vulns=tuple(acc.vulns),
        )
        for ip, acc in hosts.items()
    ]


def _merge_openvas_row(acc: _HostAccumulator, record: dict[str, str], row_no: int) -> None:
    if record["os_cpe"]:
        try:
            cpe = parse_cpe(record["os_cpe"])
        except MalformedCpe as exc:
            raise ReportParseError(f"row {row_no}, column os_cpe: {exc}") from exc
        if cpe.part is not Part.OS:
            raise ReportParseError(f"row {row_no}, column os_cpe: not an OS CPE: {record['os_cpe']}")
        if cpe not in acc.cpes:
            acc.cpes.append(cpe)
    acc.os = acc.os or (record["os"] or None)
    acc.family = acc.family or (record["family"] or None)
    acc.generation = acc.generation or (record["generation"] or None)
    acc.vendor = acc.vendor or (record["vendor"] or None)

    if record["cve_id"]:
        try:
            severity = float(record["severity"])
        except ValueError:
            raise ReportParseError(f"row {row_no}, column severity: {record['severity']!r}") from None
        if not 0.0 <= severity <= 10.0:
            raise ReportParseError(f"row {row_no}, column severity: {severity} out of range")
        acc.vulns.append((record["cve_id"], severity))

    if record["port"]:
        try:
            port = int(record["port"])
        except ValueError:
            raise ReportParseError(f"row {row_no}, column port: {record['port']!r}") from None
        if not 1 <= port <= 65535:
            raise ReportParseError(f"row {row_no}, column port: {port} out of range")
        proto = record["proto"].upper()
        if proto not in ("TCP", "UDP"):
            raise ReportParseError(f"row {row_no}, column proto: {record['proto']!r}")
        if not record["service"]:
            raise ReportParseError(f"row {row_no}, column service: empty")
        cpe = None
        if record["service_cpe"]:
            try:
                cpe = parse_cpe(record["service_cpe"])
            except MalformedCpe as exc:
                raise ReportParseError(f"row {row_no}, column service_cpe: {exc}") from exc
        key = (port, proto)
        if key in acc.service_keys:
            raise ReportParseError(f"row {row_no}, column port: duplicate service ({port}, {proto})")
        acc.service_keys.add(key)
        acc.services.append(
            ServiceObservation(
                port=port,
                proto=proto,
                name=record["service"],
                version=record["service_version"] or None,
                cpe=cpe,
            )
        )


def merge_scan_entries(
    nmap_entries: list[HostScanEntry], openvas_entries: list[HostScanEntry]
) -> list[HostScanEntry]:
    """Join per-source entries on IP into combined entries, sorted by IP."""
    merged: dict[str, HostScanEntry] = {}
    for entry in nmap_entries:
        merged[entry.ip] = entry
    for entry in openvas_entries:
        existing = merged.get(entry.ip)
        if existing is None:
            merged[entry.ip] = entry
        else:
            seen = set(existing.services)
            extra = tuple(s for s in entry.services if s not in seen)
            merged[entry.ip] = HostScanEntry(
                ip=entry.ip,
                nmap=existing.nmap,
                openvas=entry.openvas,
                services=existing.services + extra,
                vulns=existing.vulns + entry.vulns,
            )
    return sorted(merged.values(), key=lambda e: tuple(int(x) for x in e.ip.split(".")))
