"""Deployment planning: node assignment, ordered plans, init scripts, sniffers.

Plans are serialized artifacts rather than live IaaS calls; a dry-run
executor (:func:`replay_plan`) checks that executing a plan step by step
never references an entity that does not exist yet.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .model import (
    FirewallSpec,
    HostSpec,
    RouterSpec,
    Severity,
    TestbedConfig,
    Violation,
    validate_config,
    with_host_nodes,
)


class NoNodesError(ValueError):
    """assign_nodes called with an empty node list."""


class UnknownFamilyError(ValueError):
    """Host template's OS family has no init-script flavor."""


class ValidationFailed(ValueError):
    """The config failed validation; .violations carries the details."""

    def __init__(self, violations: list[Violation]):
        super().__init__(f"{len(violations)} validation violation(s)")
        self.violations = violations


class PlanReplayError(ValueError):
    """A plan step referenced an entity that does not exist yet."""


class StepKind(Enum):
    CREATE_BRIDGE = "CreateBridge"
    CREATE_VLAN = "CreateVlan"
    CREATE_ROUTER = "CreateRouter"
    CREATE_FIREWALL = "CreateFirewall"
    INSTANTIATE_HOST = "InstantiateHost"
    ATTACH_MIRROR = "AttachMirror"


@dataclass(frozen=True, slots=True)
class Step:
    kind: StepKind
    target: str
    depends_on: tuple[int, ...]
    payload: dict


@dataclass(frozen=True, slots=True)
class DeploymentPlan:
    steps: tuple[Step, ...]

    def to_json(self) -> bytes:
        doc = [
            {
                "kind": s.kind.value,
                "target": s.target,
                "depends_on": list(s.depends_on),
                "payload": s.payload,
            }
            for s in self.steps
        ]
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


@dataclass(frozen=True, slots=True)
class Tap:
    vlan: str
    mirror_sources: tuple[str, ...]
    output_port: str


@dataclass(frozen=True, slots=True)
class Sniffer:
    node: str
    bridge: str
    taps: tuple[Tap, ...]


@dataclass(frozen=True, slots=True)
class SnifferPlan:
    sniffers: tuple[Sniffer, ...]

    def to_json(self) -> bytes:
        doc = {
            "sniffers": [
                {
                    "node": s.node,
                    "bridge": s.bridge,
                    "taps": [
                        {
                            "vlan": t.vlan,
                            "mirror_sources": list(t.mirror_sources),
                            "output_port": t.output_port,
                        }
                        for t in s.taps
                    ],
                }
                for s in self.sniffers
            ]
        }
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def assign_nodes(cfg: TestbedConfig, nodes: list[str]) -> TestbedConfig:
    """Give every host a physical node, round-robin in declaration order.

    Hosts with a preset node keep it and do not consume a rotation slot.
    """
    if not nodes:
        raise NoNodesError("node list is empty")
    assignments: dict[str, str] = {}
    slot = 0
    for host in cfg.hosts:
        if host.node is None:
            assignments[host.name] = nodes[slot % len(nodes)]
            slot += 1
    return with_host_nodes(cfg, assignments)


def emit_deployment_plan(cfg: TestbedConfig) -> DeploymentPlan:
    """Order creation steps: bridges, vlans, routers/firewalls, hosts, mirrors.

    Within a tier, declaration order; the result is byte-deterministic for
    identical configs.
    """
    violations = validate_config(cfg)
    errors = [v for v in violations if v.severity is Severity.ERROR]
    if cfg.hosts and any(h.node is None for h in cfg.hosts):
        errors.append(Violation(Severity.ERROR, "hosts", "nodes not assigned; run assign_nodes first"))
    if errors:
        raise ValidationFailed(errors)

    steps: list[Step] = []
    bridge_step: dict[str, int] = {}
    vlan_step: dict[str, int] = {}
    host_step: dict[str, int] = {}

    for bridge in cfg.bridges:
        bridge_step[bridge] = len(steps)
        steps.append(Step(StepKind.CREATE_BRIDGE, bridge, (), {"name": bridge}))

    for vlan in cfg.vlans:
        vlan_step[vlan.name] = len(steps)
        steps.append(
            Step(
                StepKind.CREATE_VLAN,
                vlan.name,
                (bridge_step[vlan.bridge],),
                {"name": vlan.name, "cidr": str(vlan.cidr), "bridge": vlan.bridge},
            )
        )

    def device_step(device: RouterSpec | FirewallSpec, kind: StepKind) -> Step:
        deps = tuple(sorted({vlan_step[i.vlan] for i in device.interfaces}))
        payload = {
            "name": device.name,
            "interfaces": [{"vlan": i.vlan, "ip": str(i.ip)} for i in device.interfaces],
            "static_routes": [{"prefix": str(r.prefix), "via": str(r.via)} for r in device.static_routes],
        }
        if isinstance(device, FirewallSpec):
            payload["rules"] = [
                {
                    "order": r.order,
                    "action": r.action.value,
                    "src": str(r.src),
                    "dst": str(r.dst),
                    "proto": r.proto.value,
                    "dst_port": list(r.dst_port) if r.dst_port else None,
                }
                for r in device.rules
            ]
        return Step(kind, device.name, deps, payload)

    for router in cfg.routers:
        steps.append(device_step(router, StepKind.CREATE_ROUTER))
    for fw in cfg.firewalls:
        steps.append(device_step(fw, StepKind.CREATE_FIREWALL))

    for host in cfg.hosts:
        deps = tuple(sorted({vlan_step[n.vlan] for n in host.nics}))
        host_step[host.name] = len(steps)
        steps.append(
            Step(
                StepKind.INSTANTIATE_HOST,
                host.name,
                deps,
                {
                    "name": host.name,
                    "template": host.template,
                    "node": host.node,
                    "nics": [{"vlan": n.vlan, "ip": str(n.ip)} for n in host.nics],
                    "packages": [{"name": p.name, "version": p.version} for p in host.packages],
                    "agent_profile": host.agent_profile,
                },
            )
        )

    for sniffer in plan_sniffers(cfg).sniffers:
        source_hosts = sorted({src.split(":", 1)[0] for tap in sniffer.taps for src in tap.mirror_sources})
        deps = tuple(sorted({bridge_step[sniffer.bridge], *(host_step[h] for h in source_hosts)}))
        steps.append(
            Step(
                StepKind.ATTACH_MIRROR,
                f"sniffer-{sniffer.node}-{sniffer.bridge}",
                deps,
                {
                    "node": sniffer.node,
                    "bridge": sniffer.bridge,
                    "taps": [
                        {
                            "vlan": t.vlan,
                            "mirror_sources": list(t.mirror_sources),
                            "output_port": t.output_port,
                        }
                        for t in sniffer.taps
                    ],
                },
            )
        )

    return DeploymentPlan(steps=tuple(steps))


def plan_sniffers(cfg: TestbedConfig) -> SnifferPlan:
    """One sniffer per (node, bridge) pair that hosts at least one VM nic.

    Each sniffer gets one tap per VLAN present on that node and bridge,
    mirroring every VM nic of that VLAN on that node toward a dedicated
    output port. Router and firewall interfaces are not mirrored.
    """
    vlans = cfg.vlan_map()
    # (node, bridge) -> vlan -> [nic ids], insertion-ordered by declaration
    pairs: dict[tuple[str, str], dict[str, list[str]]] = {}
    for host in cfg.hosts:
        if host.node is None:
            continue
        for nic in host.nics:
            vlan = vlans.get(nic.vlan)
            if vlan is None:
                continue
            taps = pairs.setdefault((host.node, vlan.bridge), {})
            taps.setdefault(vlan.name, []).append(f"{host.name}:{nic.ip}")

    bridge_order = {b: i for i, b in enumerate(cfg.bridges)}
    vlan_order = {v.name: i for i, v in enumerate(cfg.vlans)}

    sniffers = []
    for node, bridge in sorted(pairs, key=lambda nb: (nb[0], bridge_order.get(nb[1], 1 << 30))):
        taps = pairs[(node, bridge)]
        sniffers.append(
            Sniffer(
                node=node,
                bridge=bridge,
                taps=tuple(
                    Tap(
                        vlan=vlan,
                        mirror_sources=tuple(taps[vlan]),
                        output_port=f"span-{node}-{bridge}-{vlan}",
                    )
                    for vlan in sorted(taps, key=lambda v: vlan_order.get(v, 1 << 30))
                ),
            )
        )
    return SnifferPlan(sniffers=tuple(sniffers))


def replay_plan(plan: DeploymentPlan) -> dict[str, int]:
    """Dry-run a plan against an empty symbol table.

    Raises PlanReplayError on a forward dependency or a reference to an
    entity no earlier step created; returns per-kind step counts.
    """
    created: dict[StepKind, set[str]] = {kind: set() for kind in StepKind}
    counts: dict[str, int] = {}
    for index, step in enumerate(plan.steps):
        for dep in step.depends_on:
            if not 0 <= dep < index:
                raise PlanReplayError(f"step {index} ({step.target}): dependency {dep} not before it")
        payload = step.payload
        if step.kind is StepKind.CREATE_VLAN:
            if payload["bridge"] not in created[StepKind.CREATE_BRIDGE]:
                raise PlanReplayError(f"step {index}: vlan {step.target} on uncreated bridge {payload['bridge']}")
        elif step.kind in (StepKind.CREATE_ROUTER, StepKind.CREATE_FIREWALL):
            for itf in payload["interfaces"]:
                if itf["vlan"] not in created[StepKind.CREATE_VLAN]:
                    raise PlanReplayError(f"step {index}: {step.target} on uncreated vlan {itf['vlan']}")
        elif step.kind is StepKind.INSTANTIATE_HOST:
            for nic in payload["nics"]:
                if nic["vlan"] not in created[StepKind.CREATE_VLAN]:
                    raise PlanReplayError(f"step {index}: host {step.target} on uncreated vlan {nic['vlan']}")
        elif step.kind is StepKind.ATTACH_MIRROR:
            if payload["bridge"] not in created[StepKind.CREATE_BRIDGE]:
                raise PlanReplayError(f"step {index}: mirror on uncreated bridge {payload['bridge']}")
            for tap in payload["taps"]:
                for source in tap["mirror_sources"]:
                    host = source.split(":", 1)[0]
                    if host not in created[StepKind.INSTANTIATE_HOST]:
                        raise PlanReplayError(f"step {index}: mirror source host {host} not instantiated")
        created[step.kind].add(step.target)
        counts[step.kind.value] = counts.get(step.kind.value, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Init scripts


def _load_template(name: str) -> str:
    return resources.files("rangekit.templates").joinpath(name).read_text(encoding="utf-8")


def _generation_tuple(generation: str) -> tuple[int, ...]:
    parts = []
    for token in generation.split("."):
        digits = "".join(ch for ch in token if ch.isdigit())
        parts.append(int(digits) if digits else 0)
    return tuple(parts)


def emit_init_script(host: HostSpec, cfg: TestbedConfig) -> str:
    """Render the first-boot provisioning script for a host.

    Linux families get a POSIX shell script with one pinned apt install
    line per package; Windows families a batch stub. Hosts with an agent
    profile also get the traffic-agent bootstrap for their service manager
    (systemd, upstart, or Task Scheduler).
    """
    template = cfg.template_map().get(host.template)
    if template is None:
        raise UnknownFamilyError(f"host {host.name}: unresolved template {host.template!r}")
    os_token = template.os.casefold()
    if "windows" in os_token:
        return _render_windows(host, template)
    if "linux" in os_token:
        return _render_linux(host, template)
    raise UnknownFamilyError(f"host {host.name}: no init flavor for OS {template.os!r}")


def _render_linux(host: HostSpec, template) -> str:
    install_lines = "\n".join(
        f"apt-get -q -y --allow-downgrades install {p.name}={p.version}" for p in host.packages
    )
    agent_lines = ""
    if host.agent_profile:
        use_upstart = template.family.casefold() == "ubuntu" and _generation_tuple(
            template.generation
        ) < (14, 4)
        if use_upstart:
            agent_lines = (
                "cat > /etc/init/traffic-agent.conf <<'EOF'\n"
                "start on runlevel [2345]\n"
                "respawn\n"
                f"exec /usr/bin/python /opt/traffic-agent/agent.py --config /etc/traffic-agent/{host.name}.json\n"
                "EOF\n"
                "initctl reload-configuration"
            )
        else:
            agent_lines = (
                "cat > /etc/systemd/system/traffic-agent.service <<'EOF'\n"
                "[Unit]\n"
                "Description=benign traffic agent\n"
                "[Service]\n"
                f"ExecStart=/usr/bin/python3 /opt/traffic-agent/agent.py --config /etc/traffic-agent/{host.name}.json\n"
                "Restart=always\n"
                "[Install]\n"
                "WantedBy=multi-user.target\n"
                "EOF\n"
                "systemctl enable traffic-agent.service"
            )
    return _load_template("linux_init.sh.tmpl").format(
        host=host.name,
        template=template.id,
        install_lines=install_lines,
        agent_lines=agent_lines,
    )


def _render_windows(host: HostSpec, template) -> str:
    install_lines = "\n".join(
        f"choco install {p.name} --version={p.version} -y" for p in host.packages
    )
    agent_lines = ""
    if host.agent_profile:
        agent_lines = (
            'schtasks /Create /TN traffic-agent /SC ONSTART /RU SYSTEM /F '
            f'/TR "python C:\\traffic-agent\\agent.py --config C:\\traffic-agent\\{host.name}.json"'
        )
    return _load_template("windows_init.bat.tmpl").format(
        host=host.name,
        template=template.id,
        install_lines=install_lines,
        agent_lines=agent_lines,
    )
