"""Acceptance suite: one test per shipping criterion, each printing a
pass/fail line and enforcing its runtime budget.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import time
from contextlib import contextmanager
from dataclasses import replace
from datetime import datetime, timezone
from ipaddress import IPv4Address
from random import Random

import pytest

from rangekit.cpe import parse_cpe
from rangekit.flows.assembly import assemble_flows
from rangekit.flows.attackstats import AttackWindow, window_stats
from rangekit.flows.capture import TCP, PacketMeta
from rangekit.model import validate_config
from rangekit.netcheck import PathVerdict, trace_path
from rangekit.planner import assign_nodes, plan_sniffers
from rangekit.scanmerge import GENERATION_OUTCOMES, Outcome, consolidate
from rangekit.traffic import JobType, WebParams, draw_job_params, load_profiles, schedule_day
from rangekit import cli

from _reference import brute_force_flows, flow_signature
from test_consolidate import DECISION_TABLE, random_observation
from rangekit.scanmerge import Source


@contextmanager
def criterion(number: int, description: str, budget_s: float | None = None):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number} ({description}): FAIL")
        raise
    elapsed = time.perf_counter() - started
    if budget_s is not None:
        assert elapsed < budget_s, f"criterion {number} took {elapsed:.1f}s (budget {budget_s}s)"
    print(f"[acceptance] criterion {number} ({description}): PASS in {elapsed:.2f}s")


def test_criterion_1_decision_table_and_fuzz():
    with criterion(1, "OS-verdict decision table + fuzz", budget_s=5.0):
        assert len(DECISION_TABLE) == 12
        outcomes = [row[2] for row in DECISION_TABLE]
        for outcome in Outcome:
            assert outcomes.count(outcome) == 2, f"{outcome} must appear twice"
        for nmap_obs, openvas_obs, expected_outcome, fields in DECISION_TABLE:
            verdict = consolidate(nmap_obs, openvas_obs)
            assert verdict.outcome is expected_outcome
            assert (verdict.os, verdict.vendor, verdict.family, verdict.generation) == fields

        # XP suppression and multi-CPE generation omission, explicitly
        from test_consolidate import nm, ov

        xp = consolidate(nm("cpe:/o:microsoft:windows_7::sp1"), ov("cpe:/o:microsoft:windows_xp"))
        assert xp.outcome is Outcome.NMAP_WITH_VERSION and xp.generation == "SP1"
        multi = consolidate(None, ov("cpe:/o:canonical:ubuntu_linux:14.04", "cpe:/o:canonical:ubuntu_linux:16.04"))
        assert multi.outcome is Outcome.OPENVAS_ONLY and multi.generation is None

        rng = Random(0xACCE14)
        for _ in range(10_000):
            verdict = consolidate(
                random_observation(rng, Source.NMAP), random_observation(rng, Source.OPENVAS)
            )
            assert verdict.outcome in Outcome
            if verdict.outcome not in GENERATION_OUTCOMES:
                assert verdict.generation is None
            assert not (verdict.os == "Windows" and verdict.generation == "XP")


ATTACK_TABLE = [
    # name, duration_s, n_pkts, published pps, displayed decimals, avg size
    ("Heartbleed", 256.3, 144, 0.6, 1, 720),
    ("Bruteforce", 6935.5, 504641, 72.76, 2, 137),
    ("Web", 1665.2, 554, 0.33, 2, 581),
    ("LAN", 1167.5, 2816, 2.41, 2, 1464),
    ("PortScan", 838.0, 24388, 29.10, 2, 61),
]


def test_criterion_2_attack_table_rounding_bridge():
    with criterion(2, "attack-table rounding bridge", budget_s=30.0):
        base = int(datetime(2018, 7, 25, tzinfo=timezone.utc).timestamp() * 1e6)
        for name, duration_s, n_pkts, published_pps, decimals, avg_size in ATTACK_TABLE:
            span_us = int(round(duration_s * 1e6))
            packets = [
                PacketMeta(
                    base + (span_us * i) // (n_pkts - 1),
                    "1.2.3.3",
                    "200.100.0.3",
                    40000,
                    22,
                    TCP,
                    avg_size,
                    0,
                )
                for i in range(n_pkts)
            ]
            window = AttackWindow(name, "1.2.3.3", "200.100.0.3", base, base + span_us)
            stats = window_stats(packets, window)
            assert stats.n_pkts == n_pkts
            assert stats.duration_s == pytest.approx(duration_s, abs=0.05)
            assert round(stats.n_pkts / (duration_s), decimals) == published_pps
            assert round(stats.avg_pps, decimals) == published_pps
            assert abs(stats.avg_size_b - avg_size) <= 1


EXPECTED_LANS = {
    "LAN1": ("10.1.10.0/24", 20),
    "LAN2": ("10.1.11.0/24", 5),
    "LAN3": ("10.1.8.0/24", 8),
    "LAN4": ("10.1.12.0/24", 4),
    "CED": ("10.2.20.0/24", 4),
    "DMZ_INT": ("10.2.9.0/24", 4),
    "DMZ_EXT": ("200.100.0.0/26", 2),
    "EXT_HOSTS": ("80.0.0.0/8", 3),
    "ATTACKERS": ("1.2.3.0/27", 2),
}


def test_criterion_3_diag_fixture_fidelity(diag_config):
    with criterion(3, "DIAG fixture fidelity"):
        vlans = diag_config.vlan_map()
        host_counts: dict[str, int] = {}
        for host in diag_config.hosts:
            for nic in host.nics:
                host_counts[nic.vlan] = host_counts.get(nic.vlan, 0) + 1
        for name, (cidr, count) in EXPECTED_LANS.items():
            assert name in vlans, name
            assert str(vlans[name].cidr) == cidr
            assert host_counts.get(name, 0) == count, name
        assert diag_config.bridges == ("br1", "br2", "br3")
        assert validate_config(diag_config) == []


def test_criterion_4_static_route_property(diag_config):
    with criterion(4, "VR2 static route to DMZ_EXT"):
        forward = trace_path(diag_config, "80.20.40.2", "200.100.0.8")
        assert forward.verdict is PathVerdict.REACHABLE
        assert "VR2" in [h.device for h in forward.hops]
        backward = trace_path(diag_config, "200.100.0.8", "80.20.40.2")
        assert backward.verdict is PathVerdict.REACHABLE

        routers = tuple(
            replace(r, static_routes=()) if r.name == "VR2" else r for r in diag_config.routers
        )
        broken = replace(diag_config, routers=routers)
        assert trace_path(broken, "80.20.40.2", "200.100.0.8").verdict is PathVerdict.NO_ROUTE


def test_criterion_5_scheduler_bounds(diag_config, diag_paths):
    with criterion(5, "scheduler bounds over 100 seeds", budget_s=60.0):
        entries = load_profiles(diag_paths["profiles"].read_bytes())
        web = [e for e in entries if e.label == "WEB"]
        day = datetime(2018, 7, 26, tzinfo=timezone.utc).date()
        counts: list[int] = []
        for seed in range(100):
            jobs = schedule_day(web, diag_config, day, seed)
            per_host: dict[str, int] = {}
            for job in jobs:
                per_host[job.host] = per_host.get(job.host, 0) + 1
                tod = datetime.fromtimestamp(job.start_ts / 1e6, tz=timezone.utc).time()
                assert (9, 0) <= (tod.hour, tod.minute) <= (18, 30)
                params = job.params
                assert isinstance(params, WebParams)
                assert 1 <= params.n_requests <= 20
                assert all(5.0 <= w <= 10.0 for w in params.waits)
                assert params.click_depth_limit <= 7
            counts.extend(per_host.values())
        assert min(counts) >= 25 and max(counts) <= 54
        mean = sum(counts) / len(counts)
        assert abs(mean - 38) <= 2, mean
        for seed in range(10_000):
            params = draw_job_params(JobType.SMB, seed)
            assert all(size % 8192 == 0 for size in params.sizes)


def test_criterion_6_flow_oracle_equivalence():
    with criterion(6, "flow assembly vs brute-force oracle"):
        from test_assembly import random_capture

        rng = Random(606)
        for _ in range(50):
            packets = random_capture(rng, max_packets=10_000)
            assert len(packets) <= 10_000
            timeout = rng.choice([30.0, 120.0])
            flows = assemble_flows(packets, idle_timeout_s=timeout)
            oracle = brute_force_flows(packets, timeout)
            assert len(flows) == len(oracle)
            assert sorted(map(flow_signature, flows)) == sorted(map(flow_signature, oracle))
            assert sum(f.fwd_pkts + f.bwd_pkts for f in flows) == len(packets)


def test_criterion_7_sniffer_partition(diag_config):
    with criterion(7, "sniffer partition on two nodes"):
        cfg = assign_nodes(diag_config, ["n1", "n2"])
        plan = plan_sniffers(cfg)
        pairs = [(s.node, s.bridge) for s in plan.sniffers]
        assert len(pairs) == len(set(pairs))
        populated = {
            (host.node, cfg.vlan_map()[nic.vlan].bridge)
            for host in cfg.hosts
            for nic in host.nics
        }
        assert set(pairs) == populated
        seen: list[str] = []
        for sniffer in plan.sniffers:
            for tap in sniffer.taps:
                seen.extend(tap.mirror_sources)
        expected = {f"{h.name}:{nic.ip}" for h in cfg.hosts for nic in h.nics}
        assert len(seen) == len(set(seen))
        assert set(seen) == expected


def test_criterion_8_pipeline_determinism(tmp_path, diag_paths):
    with criterion(8, "pipeline byte-determinism"):
        outs = []
        for name in ("run-a", "run-b"):
            out = tmp_path / name
            code = cli.main(
                [
                    "pipeline",
                    str(diag_paths["config"]),
                    str(diag_paths["profiles"]),
                    str(diag_paths["windows"]),
                    "--seed",
                    "1234",
                    "--out",
                    str(out),
                ]
            )
            assert code == 0
            outs.append(out)
        # the manifest records wall-clock run timestamps; every data artifact
        # must be byte-identical
        artifacts = ["plan.json", "sniffers.json", "schedule.jsonl", "flows.jsonl", "features.csv"]
        for artifact in artifacts:
            a = (outs[0] / artifact).read_bytes()
            b = (outs[1] / artifact).read_bytes()
            assert a == b, f"{artifact} differs between identical runs"
