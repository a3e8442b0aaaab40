"""Command-line entry point chaining the toolkit pipeline.

Exit codes: 0 success, 1 I/O error, 2 input syntax error, 3 validation or
resolution failure, 4 internal invariant breach. Machine outputs are UTF-8
with LF line endings, written only inside the chosen output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from datetime import date, datetime, timezone
from pathlib import Path

from . import __version__
from .cpe import MalformedCpe
from .flows.assembly import FlowRecord, assemble_flows
from .flows.attackstats import (
    AmbiguousLabelError,
    EmptyWindowError,
    WindowParseError,
    label_flows,
    load_attack_windows,
    window_stats,
)
from .flows.capture import CaptureFormat, CaptureFormatError, read_capture
from .flows.features import export_csv
from .model import (
    ConfigSyntaxError,
    Severity,
    TestbedConfig,
    load_config,
    validate_config,
)
from .netcheck import Proto, reachability_matrix, trace_path
from .planner import (
    PlanReplayError,
    ValidationFailed,
    assign_nodes,
    emit_deployment_plan,
    plan_sniffers,
    replay_plan,
)
from .scanmerge import (
    ReportParseError,
    consolidate,
    coverage_stats,
    merge_scan_entries,
    parse_nmap_report,
    parse_openvas_report,
)
from .traffic import (
    ProfileSyntaxError,
    UnresolvedHostError,
    UnresolvedSelectorError,
    load_profiles,
    schedule_day,
    simulate_jobs,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_SYNTAX = 2
EXIT_VALIDATION = 3
EXIT_INTERNAL = 4

_SYNTAX_ERRORS = (
    MalformedCpe,
    ReportParseError,
    ConfigSyntaxError,
    ProfileSyntaxError,
    CaptureFormatError,
    WindowParseError,
)
_VALIDATION_ERRORS = (
    ValidationFailed,
    UnresolvedSelectorError,
    UnresolvedHostError,
    AmbiguousLabelError,
    EmptyWindowError,
)


class _Run:
    """Collects artifacts in memory and flushes them together on success,
    so a failing stage leaves no partial outputs behind."""

    def __init__(self, command: str, out_dir: Path, seed: int):
        self.command = command
        self.out_dir = out_dir
        self.seed = seed
        self.started = datetime.now(timezone.utc).isoformat()
        self.inputs: list[dict[str, str]] = []
        self.artifacts: dict[str, bytes] = {}

    def read_input(self, path: str | Path) -> bytes:
        data = Path(path).read_bytes()
        digest = hashlib.blake2b(data, digest_size=8).hexdigest()
        self.inputs.append({"path": str(path), "blake2b64": digest})
        return data

    def add(self, name: str, data: bytes) -> None:
        self.artifacts[name] = data

    def flush(self) -> None:
        manifest = {
            "command": self.command,
            "inputs": self.inputs,
            "seed": self.seed,
            "tool_version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name, data in self.artifacts.items():
            (self.out_dir / name).write_bytes(data)
        (self.out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _jsonl_bytes(records) -> bytes:
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records]
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def _load_validated_config(run: _Run, path: str) -> TestbedConfig:
    cfg = load_config(run.read_input(path))
    violations = [v for v in validate_config(cfg) if v.severity is Severity.ERROR]
    if violations:
        raise ValidationFailed(violations)
    return cfg


def _verdicts_payload(entries) -> list[dict]:
    payload = []
    for entry in entries:
        verdict = consolidate(entry.nmap, entry.openvas)
        payload.append(
            {
                "ip": entry.ip,
                "outcome": verdict.outcome.value,
                "os": verdict.os,
                "vendor": verdict.vendor,
                "family": verdict.family,
                "generation": verdict.generation,
            }
        )
    return payload


def _flow_payload(flow: FlowRecord, extra: dict | None = None) -> dict:
    payload = {
        "src_ip": flow.key.src_ip,
        "src_port": flow.key.src_port,
        "dst_ip": flow.key.dst_ip,
        "dst_port": flow.key.dst_port,
        "proto": flow.key.proto,
        "first_ts": flow.first_ts,
        "last_ts": flow.last_ts,
        "fwd_pkts": flow.fwd_pkts,
        "bwd_pkts": flow.bwd_pkts,
        "fwd_bytes": flow.fwd_bytes,
        "bwd_bytes": flow.bwd_bytes,
        "flags": dict(flow.flag_counts),
        "label": flow.label,
    }
    if extra:
        payload.update(extra)
    return payload


def _params_payload(params) -> dict:
    payload = asdict(params)
    payload["kind"] = type(params).__name__
    return payload


def _schedule_payload(jobs) -> list[dict]:
    return [
        {
            "job_id": j.job_id,
            "label": j.label,
            "host": j.host,
            "type": j.job_type.value,
            "server": j.server,
            "start_ts": j.start_ts,
            "params": _params_payload(j.params),
        }
        for j in jobs
    ]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_merge_scans(args) -> int:
    run = _Run("merge-scans", Path(args.out), args.seed)
    nmap_entries = []
    for path in args.nmap:
        try:
            nmap_entries.extend(parse_nmap_report(run.read_input(path)))
        except ReportParseError as exc:
            raise ReportParseError(f"{path}: {exc}") from exc
    openvas_entries = []
    for path in args.openvas:
        try:
            openvas_entries.extend(parse_openvas_report(run.read_input(path)))
        except ReportParseError as exc:
            raise ReportParseError(f"{path}: {exc}") from exc
    merged = merge_scan_entries(nmap_entries, openvas_entries)
    payload = _verdicts_payload(merged)
    run.add("verdicts.json", _json_bytes(payload))
    run.flush()
    verdicts = [consolidate(e.nmap, e.openvas) for e in merged]
    report = coverage_stats(verdicts)
    fraction = "n/a" if report.fraction is None else f"{report.fraction:.2f}"
    print(
        f"{len(merged)} hosts, {report.with_generation}/{report.total} with generation "
        f"(fraction {fraction})",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    run = _Run("validate", Path(args.out), args.seed)
    cfg = load_config(run.read_input(args.config))
    violations = validate_config(cfg)
    payload = [
        {"severity": v.severity.value, "path": v.path, "message": v.message} for v in violations
    ]
    run.add("violations.json", _json_bytes(payload))
    run.flush()
    for item in payload:
        print(f"{item['severity']}: {item['path']}: {item['message']}")
    if any(v.severity is Severity.ERROR for v in violations):
        return EXIT_VALIDATION
    return EXIT_OK


def _assigned_config(run: _Run, args) -> TestbedConfig:
    cfg = _load_validated_config(run, args.config)
    nodes = [n.strip() for n in args.nodes.split(",") if n.strip()]
    return assign_nodes(cfg, nodes)


def cmd_plan(args) -> int:
    run = _Run("plan", Path(args.out), args.seed)
    cfg = _assigned_config(run, args)
    plan = emit_deployment_plan(cfg)
    replay_plan(plan)
    run.add("plan.json", plan.to_json())
    run.flush()
    print(f"{len(plan.steps)} steps", file=sys.stderr)
    return EXIT_OK


def cmd_sniffers(args) -> int:
    run = _Run("sniffers", Path(args.out), args.seed)
    cfg = _assigned_config(run, args)
    sniffer_plan = plan_sniffers(cfg)
    run.add("sniffers.json", sniffer_plan.to_json())
    run.flush()
    print(f"{len(sniffer_plan.sniffers)} sniffers", file=sys.stderr)
    return EXIT_OK


def cmd_route_check(args) -> int:
    run = _Run("route-check", Path(args.out), args.seed)
    cfg = _load_validated_config(run, args.config)
    proto = Proto(args.proto)
    if args.matrix:
        endpoints = [e.strip() for e in args.matrix.split(",") if e.strip()]
        matrix = reachability_matrix(cfg, endpoints, proto, args.port)
        for i, src in enumerate(endpoints):
            for j, dst in enumerate(endpoints):
                print(json.dumps({"src": src, "dst": dst, "verdict": matrix[i][j].value}, sort_keys=True))
    else:
        path = trace_path(cfg, args.src, args.dst, proto, args.port)
        print(
            json.dumps(
                {
                    "src": args.src,
                    "dst": args.dst,
                    "verdict": path.verdict.value,
                    "hops": [
                        {"device": h.device, "ingress_vlan": h.ingress_vlan, "egress_vlan": h.egress_vlan}
                        for h in path.hops
                    ],
                },
                sort_keys=True,
            )
        )
    run.flush()
    return EXIT_OK


def cmd_schedule(args) -> int:
    run = _Run("schedule", Path(args.out), args.seed)
    cfg = _load_validated_config(run, args.config)
    entries = load_profiles(run.read_input(args.profiles))
    jobs = schedule_day(entries, cfg, date.fromisoformat(args.date), args.seed)
    run.add("schedule.jsonl", _jsonl_bytes(_schedule_payload(jobs)))
    run.flush()
    print(f"{len(jobs)} jobs", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    run = _Run("simulate", Path(args.out), args.seed)
    cfg = _load_validated_config(run, args.config)
    entries = load_profiles(run.read_input(args.profiles))
    jobs = schedule_day(entries, cfg, date.fromisoformat(args.date), args.seed)
    log = simulate_jobs(jobs, cfg, args.seed)
    run.add("schedule.jsonl", _jsonl_bytes(_schedule_payload(jobs)))
    run.add(
        "flows.jsonl",
        _jsonl_bytes(
            _flow_payload(jf.flow, {"job_id": jf.job_id, "host": jf.host, "server": jf.server, "type": jf.job_type.value})
            for jf in log.flows
        ),
    )
    run.flush()
    print(f"{len(jobs)} jobs, {len(log.flows)} flows", file=sys.stderr)
    return EXIT_OK


def _read_packets(run: _Run, args):
    data = run.read_input(args.capture)
    fmt = CaptureFormat.PCAP if args.capture_format == "pcap" else CaptureFormat.PACKET_CSV
    return read_capture(data, fmt)


def _vlan_networks(run: _Run, config_path: str | None):
    if not config_path:
        return None
    cfg = load_config(run.read_input(config_path))
    return {v.name: v.cidr for v in cfg.vlans}


def cmd_flows_extract(args) -> int:
    run = _Run("flows-extract", Path(args.out), args.seed)
    packets = _read_packets(run, args)
    flows = assemble_flows(packets, idle_timeout_s=args.timeout)
    run.add("features.csv", export_csv(flows))
    run.flush()
    print(f"{len(packets)} packets, {len(flows)} flows, {packets.skipped_non_ipv4} skipped", file=sys.stderr)
    return EXIT_OK


def cmd_flows_label(args) -> int:
    run = _Run("flows-label", Path(args.out), args.seed)
    packets = _read_packets(run, args)
    windows = load_attack_windows(run.read_input(args.windows))
    vlans = _vlan_networks(run, args.config)
    flows = assemble_flows(packets, idle_timeout_s=args.timeout)
    labeled = label_flows(flows, windows, vlans)
    run.add("features.csv", export_csv(labeled))
    run.flush()
    attack = sum(1 for f in labeled if f.label != "benign")
    print(f"{len(labeled)} flows, {attack} attack-labeled", file=sys.stderr)
    return EXIT_OK


def cmd_stats(args) -> int:
    run = _Run("stats", Path(args.out), args.seed)
    packets = _read_packets(run, args)
    windows = load_attack_windows(run.read_input(args.windows))
    vlans = _vlan_networks(run, args.config)
    payload = []
    for window in windows:
        stats = window_stats(packets, window, vlans)
        payload.append(
            {
                "name": window.name,
                "duration_s": stats.duration_s,
                "n_pkts": stats.n_pkts,
                "avg_pps": stats.avg_pps,
                "avg_size_b": stats.avg_size_b,
            }
        )
    if args.format == "csv":
        lines = ["name,duration_s,n_pkts,avg_pps,avg_size_b"]
        lines.extend(
            f"{i['name']},{i['duration_s']},{i['n_pkts']},{i['avg_pps']},{i['avg_size_b']}" for i in payload
        )
        run.add("window_stats.csv", ("\n".join(lines) + "\n").encode("utf-8"))
    else:
        run.add("window_stats.json", _json_bytes(payload))
    run.flush()
    for item in payload:
        print(json.dumps(item, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    run = _Run("pipeline", Path(args.out), args.seed)
    cfg = _load_validated_config(run, args.config)
    entries = load_profiles(run.read_input(args.profiles))
    windows = load_attack_windows(run.read_input(args.windows))

    nodes = [n.strip() for n in args.nodes.split(",") if n.strip()]
    cfg = assign_nodes(cfg, nodes)

    plan = emit_deployment_plan(cfg)
    replay_plan(plan)
    run.add("plan.json", plan.to_json())
    run.add("sniffers.json", plan_sniffers(cfg).to_json())

    jobs = schedule_day(entries, cfg, date.fromisoformat(args.date), args.seed)
    run.add("schedule.jsonl", _jsonl_bytes(_schedule_payload(jobs)))

    log = simulate_jobs(jobs, cfg, args.seed)
    run.add(
        "flows.jsonl",
        _jsonl_bytes(
            _flow_payload(jf.flow, {"job_id": jf.job_id, "host": jf.host, "server": jf.server, "type": jf.job_type.value})
            for jf in log.flows
        ),
    )

    vlans = {v.name: v.cidr for v in cfg.vlans}
    labeled = label_flows([jf.flow for jf in log.flows], windows, vlans)
    run.add("features.csv", export_csv(labeled))
    run.flush()
    print(f"{len(plan.steps)} plan steps, {len(jobs)} jobs, {len(labeled)} flows", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rangekit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rangekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")

    p = sub.add_parser("merge-scans", help="consolidate scanner reports into OS verdicts")
    p.add_argument("--nmap", action="append", default=[], help="Nmap XML report (repeatable)")
    p.add_argument("--openvas", action="append", default=[], help="normalized OpenVAS CSV (repeatable)")
    common(p)
    p.set_defaults(func=cmd_merge_scans)

    p = sub.add_parser("validate", help="check a testbed config")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_validate)

    for name, func, help_text in (
        ("plan", cmd_plan, "emit the ordered deployment plan"),
        ("sniffers", cmd_sniffers, "emit the SPAN sniffer plan"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--nodes", default="n1,n2", help="comma-separated node ids (default: n1,n2)")
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("route-check", help="trace L3 reachability")
    p.add_argument("config")
    p.add_argument("--src")
    p.add_argument("--dst")
    p.add_argument("--matrix", help="comma-separated endpoints for a full matrix")
    p.add_argument("--proto", choices=["any", "tcp", "udp"], default="any")
    p.add_argument("--port", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_route_check)

    for name, func, help_text in (
        ("schedule", cmd_schedule, "generate the day's job schedule"),
        ("simulate", cmd_simulate, "schedule and render synthetic flows"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("profiles")
        p.add_argument("--date", default="2018-07-26", help="virtual day (default: 2018-07-26)")
        common(p)
        p.set_defaults(func=func)

    for name, func, needs_windows in (
        ("flows-extract", cmd_flows_extract, False),
        ("flows-label", cmd_flows_label, True),
        ("stats", cmd_stats, True),
    ):
        p = sub.add_parser(name, help=f"{name} over a capture file")
        p.add_argument("capture")
        if needs_windows:
            p.add_argument("windows")
            p.add_argument("--config", default=None, help="config for vlan-name endpoint tokens")
        p.add_argument("--capture-format", choices=["pcap", "csv"], default="pcap")
        p.add_argument("--timeout", type=float, default=120.0, help="idle timeout seconds (default: 120)")
        if name == "stats":
            p.add_argument("--format", choices=["json", "csv"], default="json")
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("pipeline", help="run the whole chain into one output directory")
    p.add_argument("config")
    p.add_argument("profiles")
    p.add_argument("windows")
    p.add_argument("--nodes", default="n1,n2")
    p.add_argument("--date", default="2018-07-26")
    common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "route-check" and not args.matrix and not (args.src and args.dst):
        parser.error("route-check needs --src and --dst, or --matrix")
    try:
        return args.func(args)
    except _SYNTAX_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SYNTAX
    except _VALIDATION_ERRORS as exc:
        if isinstance(exc, ValidationFailed):
            for violation in exc.violations:
                print(f"error: {violation.path}: {violation.message}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PlanReplayError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
