"""Benign-traffic profiles: scheduling, parameter draws, flow simulation.

The profile table drives per-host job schedules over a virtual day; jobs
render into synthetic packet exchanges and then into flow records, so the
rest of the pipeline can be exercised without opening a single socket.
All randomness is seeded and host-keyed, so results are reproducible and
independent of any parallel execution order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from datetime import date as date_type
from datetime import datetime, time, timezone
from enum import Enum
from importlib import resources
from random import Random

from .flows.assembly import FlowRecord, assemble_flows
from .flows.capture import ACK, FIN, SYN, TCP, PacketMeta
from .model import HostSpec, TestbedConfig


class ProfileSyntaxError(ValueError):
    """Profile CSV is malformed; message carries the row number."""


class UnresolvedSelectorError(ValueError):
    """A host or server token does not resolve against the config."""


class UnresolvedHostError(ValueError):
    """A scheduled job references a host or server with no address."""


class JobType(Enum):
    WEB = "WEB"
    SMB = "SMB"
    SSH = "SSH"
    SFTP = "SFTP"


class SelectorKind(Enum):
    ALL = "all"
    ALL_BUT = "all_but"
    EXPLICIT = "explicit"


@dataclass(frozen=True, slots=True)
class HostSelector:
    kind: SelectorKind
    names: tuple[str, ...] = ()

    def matches(self, host: HostSpec) -> bool:
        if self.kind is SelectorKind.EXPLICIT:
            return host.name in self.names
        if host.agent_profile is None:
            return False
        return self.kind is SelectorKind.ALL or host.name not in self.names


@dataclass(frozen=True, slots=True)
class TrafficProfileEntry:
    label: str
    job_type: JobType
    start: time
    end: time
    freq_minutes: float
    hosts: HostSelector
    servers: tuple[str, ...] | None  # None means wildcard "*"


@dataclass(frozen=True, slots=True)
class WebParams:
    n_requests: int
    click_depth_limit: int
    waits: tuple[float, ...]
    user_agent: str


@dataclass(frozen=True, slots=True)
class SshParams:
    n_commands: int
    session_seconds: float
    commands: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class TransferParams:
    n_files: int
    sizes: tuple[int, ...]
    base_size: int = 8192


JobParams = WebParams | SshParams | TransferParams


@dataclass(frozen=True, slots=True)
class ScheduledJob:
    job_id: str
    label: str
    host: str
    job_type: JobType
    server: str
    start_ts: int  # epoch microseconds
    params: JobParams


@dataclass(frozen=True, slots=True)
class JobFlow:
    job_id: str
    host: str
    server: str
    job_type: JobType
    flow: FlowRecord


@dataclass(frozen=True, slots=True)
class SyntheticFlowLog:
    flows: tuple[JobFlow, ...]


CLICK_DEPTH_LIMIT = 7
TRANSFER_BASE_SIZE = 8192

_USER_AGENTS = {
    "windows": "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36",
    "linux": "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36",
}

_TYPE_TOKEN = re.compile(r"^(WEB|SMB|SSH|SFTP)\d*$")
_RANGE_TOKEN = re.compile(r"^([A-Za-z_][A-Za-z0-9_-]*?)(\d+)-(\d+)$")


@lru_cache(maxsize=1)
def _ssh_command_pool() -> tuple[str, ...]:
    text = resources.files("rangekit.data").joinpath("ssh_commands.txt").read_text(encoding="utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def mix_seed(*parts) -> int:
    """Derive a 64-bit stream seed from the master seed and key tokens."""
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        digest.update(str(part).encode("utf-8"))
        digest.update(b"\x1f")
    return int.from_bytes(digest.digest(), "big")


# ---------------------------------------------------------------------------
# Profile loading


def _parse_time(token: str, row_no: int) -> time:
    try:
        return datetime.strptime(token.strip(), "%H:%M").time()
    except ValueError:
        raise ProfileSyntaxError(f"row {row_no}: bad time {token!r}") from None


def _expand_server_token(token: str, row_no: int) -> list[str]:
    match = _RANGE_TOKEN.match(token)
    if not match:
        return [token]
    prefix, low, high = match.group(1), int(match.group(2)), int(match.group(3))
    if low > high:
        raise ProfileSyntaxError(f"row {row_no}: bad range {token!r}")
    return [f"{prefix}{i}" for i in range(low, high + 1)]


def _parse_selector(token: str) -> HostSelector:
    token = token.strip()
    if token == "All":
        return HostSelector(SelectorKind.ALL)
    if token.startswith("All-{") and token.endswith("}"):
        names = tuple(t.strip() for t in token[len("All-{") : -1].split(",") if t.strip())
        return HostSelector(SelectorKind.ALL_BUT, names)
    if token.startswith("{") and token.endswith("}"):
        names = tuple(t.strip() for t in token[1:-1].split(",") if t.strip())
        return HostSelector(SelectorKind.EXPLICIT, names)
    return HostSelector(SelectorKind.EXPLICIT, (token,))


def load_profiles(document: bytes) -> list[TrafficProfileEntry]:
    """Parse the profile CSV: type,start,end,freq,hosts,servers."""
    reader = csv.reader(io.StringIO(document.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise ProfileSyntaxError("row 1: missing header") from None
    if tuple(header) != ("type", "start", "end", "freq", "hosts", "servers"):
        raise ProfileSyntaxError("row 1: header must be type,start,end,freq,hosts,servers")
    entries = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell for cell in row):
            continue
        if len(row) != 6:
            raise ProfileSyntaxError(f"row {row_no}: expected 6 columns")
        label = row[0].strip()
        match = _TYPE_TOKEN.match(label)
        if not match:
            raise ProfileSyntaxError(f"row {row_no}: unknown job type {label!r}")
        start = _parse_time(row[1], row_no)
        end = _parse_time(row[2], row_no)
        if start >= end:
            raise ProfileSyntaxError(f"row {row_no}: start {row[1]} must precede end {row[2]}")
        try:
            freq = float(row[3])
        except ValueError:
            raise ProfileSyntaxError(f"row {row_no}: bad freq {row[3]!r}") from None
        if freq <= 0:
            raise ProfileSyntaxError(f"row {row_no}: freq must be positive")
        servers_field = row[5].strip()
        if servers_field == "*":
            servers: tuple[str, ...] | None = None
        else:
            expanded: list[str] = []
            for token in servers_field.split(","):
                token = token.strip()
                if token:
                    expanded.extend(_expand_server_token(token, row_no))
            if not expanded:
                raise ProfileSyntaxError(f"row {row_no}: empty server list")
            servers = tuple(expanded)
        entries.append(
            TrafficProfileEntry(
                label=label,
                job_type=JobType(match.group(1)),
                start=start,
                end=end,
                freq_minutes=freq,
                hosts=_parse_selector(row[4]),
                servers=servers,
            )
        )
    return entries


# ---------------------------------------------------------------------------
# Scheduling


def _agent_pool(cfg: TestbedConfig) -> list[HostSpec]:
    return [h for h in cfg.hosts if h.agent_profile is not None]


def resolve_selector(entry: TrafficProfileEntry, cfg: TestbedConfig) -> list[HostSpec]:
    """Hosts selected by an entry, in declaration order."""
    hosts = cfg.host_map()
    if entry.hosts.kind is SelectorKind.EXPLICIT:
        missing = [n for n in entry.hosts.names if n not in hosts]
        if missing:
            raise UnresolvedSelectorError(f"{entry.label}: unknown hosts {missing}")
        return [hosts[n] for n in entry.hosts.names]
    if entry.hosts.kind is SelectorKind.ALL_BUT:
        missing = [n for n in entry.hosts.names if n not in hosts]
        if missing:
            raise UnresolvedSelectorError(f"{entry.label}: unknown excluded hosts {missing}")
    return [h for h in _agent_pool(cfg) if entry.hosts.matches(h)]


def resolve_servers(entry: TrafficProfileEntry, cfg: TestbedConfig) -> list[str]:
    """Server names for an entry; the wildcard means every agent-less host
    outside the entry's own selection."""
    if entry.servers is not None:
        hosts = cfg.host_map()
        missing = [s for s in entry.servers if s not in hosts]
        if missing:
            raise UnresolvedSelectorError(f"{entry.label}: unknown servers {missing}")
        return list(entry.servers)
    selected = {h.name for h in resolve_selector(entry, cfg)}
    pool = [h.name for h in cfg.hosts if h.agent_profile is None and h.name not in selected]
    if not pool:
        raise UnresolvedSelectorError(f"{entry.label}: wildcard servers resolve to nothing")
    return pool


def _os_family(cfg: TestbedConfig, host: HostSpec) -> str:
    template = cfg.template_map().get(host.template)
    return template.os if template else "Linux"


def schedule_day(
    entries: list[TrafficProfileEntry],
    cfg: TestbedConfig,
    date: date_type,
    seed: int,
) -> list[ScheduledJob]:
    """Generate the day's jobs for every (entry, host) pairing.

    The first job of a pairing fires at the entry's start; subsequent
    inter-start gaps draw uniformly from [0.5, 1.5] x freq minutes until
    the window closes. Each (entry, host) pairing derives its own RNG
    stream, so schedules are stable under any evaluation order.
    """
    midnight = datetime.combine(date, time(0, 0), tzinfo=timezone.utc)
    midnight_us = int(midnight.timestamp() * 1e6)
    jobs: list[ScheduledJob] = []
    for entry in entries:
        selected = resolve_selector(entry, cfg)
        servers = resolve_servers(entry, cfg)
        start_min = entry.start.hour * 60 + entry.start.minute
        end_min = entry.end.hour * 60 + entry.end.minute
        for host in selected:
            rng = Random(mix_seed(seed, entry.label, host.name))
            family = _os_family(cfg, host)
            minute = float(start_min)
            sequence = 0
            while minute <= end_min:
                server = servers[rng.randrange(len(servers))]
                params = draw_job_params(entry.job_type, rng.getrandbits(63), os_family=family)
                jobs.append(
                    ScheduledJob(
                        job_id=f"{entry.label}-{host.name}-{sequence}",
                        label=entry.label,
                        host=host.name,
                        job_type=entry.job_type,
                        server=server,
                        start_ts=midnight_us + int(round(minute * 60e6)),
                        params=params,
                    )
                )
                sequence += 1
                minute += rng.uniform(0.5 * entry.freq_minutes, 1.5 * entry.freq_minutes)
    jobs.sort(key=lambda j: (j.start_ts, j.host, j.label, j.job_id))
    return jobs


def draw_job_params(job_type: JobType, seed: int, os_family: str = "Linux") -> JobParams:
    """Draw one job's randomized parameters from a dedicated seed."""
    rng = Random(seed)
    if job_type is JobType.WEB:
        n_requests = rng.randint(1, 20)
        waits = tuple(rng.uniform(5.0, 10.0) for _ in range(n_requests))
        agent = _USER_AGENTS["windows"] if "windows" in os_family.casefold() else _USER_AGENTS["linux"]
        return WebParams(
            n_requests=n_requests,
            click_depth_limit=CLICK_DEPTH_LIMIT,
            waits=waits,
            user_agent=agent,
        )
    if job_type is JobType.SSH:
        pool = _ssh_command_pool()
        n_commands = rng.randint(1, 12)
        return SshParams(
            n_commands=n_commands,
            session_seconds=rng.uniform(30.0, 600.0),
            commands=tuple(rng.choice(pool) for _ in range(n_commands)),
        )
    n_files = rng.randint(1, 10)
    sizes = tuple(TRANSFER_BASE_SIZE * rng.randint(1, 64) for _ in range(n_files))
    return TransferParams(n_files=n_files, sizes=sizes)


# ---------------------------------------------------------------------------
# Simulation


def _host_ip(cfg: TestbedConfig, name: str) -> str:
    host = cfg.host_map().get(name)
    if host is None or not host.nics:
        raise UnresolvedHostError(f"no addressable host {name!r}")
    return str(host.nics[0].ip)


def _click_path_depths(rng: Random, n_requests: int) -> list[int]:
    """Depths of a random walk down a click tree, capped at the limit.

    Branch out-degree is uniform in 1..5; reaching the depth limit
    restarts the walk at a root page.
    """
    depths = []
    depth = 0
    for _ in range(n_requests):
        depths.append(depth)
        rng.randint(1, 5)  # out-degree draw of the followed link
        depth += 1
        if depth > CLICK_DEPTH_LIMIT:
            depth = 0
    return depths


def _web_packets(rng: Random, job: ScheduledJob, src_ip: str, dst_ip: str) -> list[list[PacketMeta]]:
    params = job.params
    exchanges = []
    t = job.start_ts
    base_port = rng.randint(29000, 58000)
    _click_path_depths(rng, params.n_requests)
    for i in range(params.n_requests):
        t += int(round(params.waits[i] * 1e6))
        sport = base_port + i
        dport = rng.choice((80, 443))
        request_len = rng.randint(220, 780)
        packets = [
            PacketMeta(t, src_ip, dst_ip, sport, dport, TCP, 66, SYN),
            PacketMeta(t + 800, dst_ip, src_ip, dport, sport, TCP, 66, SYN | ACK),
            PacketMeta(t + 1500, src_ip, dst_ip, sport, dport, TCP, request_len, ACK),
        ]
        offset = 2600
        for _ in range(rng.randint(1, 4)):
            packets.append(PacketMeta(t + offset, dst_ip, src_ip, dport, sport, TCP, rng.randint(400, 1500), ACK))
            offset += rng.randint(900, 4000)
        packets.append(PacketMeta(t + offset, src_ip, dst_ip, sport, dport, TCP, 66, FIN | ACK))
        packets.append(PacketMeta(t + offset + 700, dst_ip, src_ip, dport, sport, TCP, 66, FIN | ACK))
        exchanges.append(packets)
    return exchanges


def _ssh_packets(rng: Random, job: ScheduledJob, src_ip: str, dst_ip: str, dst_port: int) -> list[list[PacketMeta]]:
    params = job.params
    sport = rng.randint(29000, 60000)
    start = job.start_ts
    end = start + int(round(params.session_seconds * 1e6))
    packets = [
        PacketMeta(start, src_ip, dst_ip, sport, dst_port, TCP, 66, SYN),
        PacketMeta(start + 900, dst_ip, src_ip, dst_port, sport, TCP, 66, SYN | ACK),
    ]
    span = end - start - 2_000_000
    for i, _command in enumerate(params.commands):
        t = start + 1_000_000 + (span * (i + 1)) // (len(params.commands) + 1)
        packets.append(PacketMeta(t, src_ip, dst_ip, sport, dst_port, TCP, rng.randint(90, 180), ACK))
        packets.append(PacketMeta(t + 1200, dst_ip, src_ip, dst_port, sport, TCP, rng.randint(100, 1400), ACK))
    packets.append(PacketMeta(end - 600, src_ip, dst_ip, sport, dst_port, TCP, 66, FIN | ACK))
    packets.append(PacketMeta(end, dst_ip, src_ip, dst_port, sport, TCP, 66, FIN | ACK))
    return [packets]


def _transfer_packets(
    rng: Random, job: ScheduledJob, src_ip: str, dst_ip: str, dst_port: int
) -> list[list[PacketMeta]]:
    params = job.params
    exchanges = []
    t = job.start_ts
    base_port = rng.randint(29000, 58000)
    for i, size in enumerate(params.sizes):
        sport = base_port + i
        upload = rng.random() < 0.5
        packets = [
            PacketMeta(t, src_ip, dst_ip, sport, dst_port, TCP, 66, SYN),
            PacketMeta(t + 900, dst_ip, src_ip, dst_port, sport, TCP, 66, SYN | ACK),
        ]
        offset = 1800
        remaining = size
        while remaining > 0:
            chunk = min(1460, remaining)
            if upload:
                packets.append(PacketMeta(t + offset, src_ip, dst_ip, sport, dst_port, TCP, chunk + 54, ACK))
            else:
                packets.append(PacketMeta(t + offset, dst_ip, src_ip, dst_port, sport, TCP, chunk + 54, ACK))
            remaining -= chunk
            offset += rng.randint(200, 900)
        packets.append(PacketMeta(t + offset, src_ip, dst_ip, sport, dst_port, TCP, 66, FIN | ACK))
        packets.append(PacketMeta(t + offset + 700, dst_ip, src_ip, dst_port, sport, TCP, 66, FIN | ACK))
        exchanges.append(packets)
        t += offset + rng.randint(1_000_000, 5_000_000)
    return exchanges


def simulate_jobs(jobs: list[ScheduledJob], cfg: TestbedConfig, seed: int) -> SyntheticFlowLog:
    """Render scheduled jobs into synthetic flow records.

    Every job yields at least one flow between its host and server
    addresses: one flow per request for WEB (port 80/443), a single
    session flow for SSH (port 22), and one flow per transferred file for
    SMB (port 445) and SFTP (port 22).
    """
    job_flows: list[JobFlow] = []
    for job in jobs:
        rng = Random(mix_seed(seed, "simulate", job.job_id))
        src_ip = _host_ip(cfg, job.host)
        dst_ip = _host_ip(cfg, job.server)
        if job.job_type is JobType.WEB:
            exchanges = _web_packets(rng, job, src_ip, dst_ip)
        elif job.job_type is JobType.SSH:
            exchanges = _ssh_packets(rng, job, src_ip, dst_ip, 22)
        elif job.job_type is JobType.SFTP:
            exchanges = _transfer_packets(rng, job, src_ip, dst_ip, 22)
        else:
            exchanges = _transfer_packets(rng, job, src_ip, dst_ip, 445)
        packets = [p for exchange in exchanges for p in exchange]
        packets.sort(key=lambda p: p.ts)
        for flow in assemble_flows(packets, idle_timeout_s=float("inf"), engine="python"):
            job_flows.append(
                JobFlow(job_id=job.job_id, host=job.host, server=job.server, job_type=job.job_type, flow=flow)
            )
    job_flows.sort(key=lambda jf: (jf.flow.first_ts, jf.job_id, jf.flow.key.src_port))
    return SyntheticFlowLog(flows=tuple(job_flows))


# ---------------------------------------------------------------------------
# Agent configuration


def render_agent_config(host: HostSpec, entries: list[TrafficProfileEntry]) -> str:
    """Per-host agent configuration: the entries that select this host.

    Byte-deterministic; the wildcard server list is kept as "*" for the
    agent to resolve at run time.
    """
    jobs = []
    for entry in entries:
        if not entry.hosts.matches(host):
            continue
        jobs.append(
            {
                "label": entry.label,
                "type": entry.job_type.value,
                "start": entry.start.strftime("%H:%M"),
                "end": entry.end.strftime("%H:%M"),
                "freq_minutes": entry.freq_minutes,
                "servers": "*" if entry.servers is None else list(entry.servers),
            }
        )
    doc = {"host": host.name, "profile": host.agent_profile, "jobs": jobs}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
