"""Scenario files: schema, parsing, validation, defaults.

A scenario is a JSON document (see the bundled files under
``bluesim/scenarios/``) describing topology, agents, detection content,
trust policy and scripted adversary/traffic behavior. Omitted fields fall
back to the defaults of the baseline engagement. ``load_scenario`` fails
with a ParseError carrying line information for malformed JSON and a
ValidationError naming the first dangling reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .blue import AutonomyMode, AutonomyPolicy
from .ids import LogEventKind, LogRule
from .kernel import NodeKind
from .messaging import FragmentPolicy


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass


@dataclass
class NodeSpec:
    id: str
    kind: NodeKind = NodeKind.DEVICE
    isolation: bool = False


@dataclass
class LinkSpec:
    src: str
    dst: str
    delay: float = 0.0
    loss: float = 0.0
    contested: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class SignatureSpec:
    id: str
    pattern: bytes
    weight: float


@dataclass
class BlueSpec:
    id: str
    node: str
    peers: list[str]
    policy: AutonomyPolicy
    response_latency: float = 0.0


@dataclass
class C2Spec:
    id: str = "Blue-C2"
    node: str = "c2-node"
    processing_latency: float = 0.1
    deferral_deadline: float = 30.0
    operator_latency: float = 5.0


@dataclass
class RedSpec:
    id: str = "Red-35"
    entry_node: str = "device-17"
    target_site: str = "red-site"
    infiltrate_at: float = 0.1
    first_beacon_delay: float = 0.1
    beacon_period: float = 1.0
    payload_pattern: Optional[str] = None  # signature id to embed
    payload_hex: Optional[str] = None
    corruption: float = 0.0
    compromised_blue: Optional[tuple[str, float]] = None
    log_noise: bool = False
    log_noise_period: float = 2.0


@dataclass
class BenignFlowSpec:
    src: str
    dst: str
    period: float
    start: float = 0.0
    payload_hex: Optional[str] = None
    payload_random: int = 0


@dataclass
class TrustSpec:
    quorum: int = 0
    eligible_approvers: list[str] = field(default_factory=list)
    boundary: list[str] = field(default_factory=list)


@dataclass
class MessagingSpec:
    segment_size: int = 64
    min_segments: int = 3
    blend_ratio: float = 1.0
    freshness_window: float = 60.0
    epoch_length: float = 30.0
    address_space: int = 65536

    def fragment_policy(self) -> FragmentPolicy:
        return FragmentPolicy(self.segment_size, self.min_segments, self.blend_ratio)


@dataclass
class JoinSpec:
    at: float
    node: str
    facts: dict[str, bool]


@dataclass
class MigrationSpec:
    """Forced move of a live agent, bypassing authorization (exercise for boundary rules)."""
    at: float
    agent: str
    to_node: str


@dataclass
class TransferSpec:
    """Scripted authorized transfer attempt by an agent."""
    at: float
    by: str
    to_node: str
    approvals: list[str] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    duration: float
    nodes: list[NodeSpec]
    links: list[LinkSpec]
    routes: dict[tuple[str, str], list[list[str]]]
    signatures: list[SignatureSpec]
    gram_size: int
    log_rules: list[LogRule]
    messaging: MessagingSpec
    blue_agents: list[BlueSpec]
    c2: C2Spec
    red: Optional[RedSpec]
    benign_traffic: list[BenignFlowSpec]
    trust: TrustSpec
    comply_required: list[str]
    joins: list[JoinSpec]
    migrations: list[MigrationSpec]
    transfers: list[TransferSpec]


def _policy_from(raw: dict) -> AutonomyPolicy:
    return AutonomyPolicy(
        mode=AutonomyMode(raw.get("mode", "full")),
        defer_threshold=raw.get("defer_threshold", 0.5),
        act_threshold=raw.get("act_threshold", 0.9),
        c2_wait=raw.get("c2_wait", 2.78),
        peer_wait=raw.get("peer_wait", 7.0),
        act_latency=raw.get("act_latency", 2.0),
        quarantine_latency=raw.get("quarantine_latency", 5.0),
        overwrite_latency=raw.get("overwrite_latency", 0.3),
        c2_request_latency=raw.get("c2_request_latency", 0.02),
        freshness_window=raw.get("freshness_window", 60.0),
    )


def _signature_bytes(raw: dict) -> bytes:
    if "hex" in raw:
        return bytes.fromhex(raw["hex"])
    if "pattern" in raw:
        return raw["pattern"].encode()
    raise ValidationError(f"signature {raw.get('id', '?')!r} needs 'pattern' or 'hex'")


def parse_scenario(raw: dict, source: str = "<memory>") -> ScenarioConfig:
    try:
        nodes = [NodeSpec(n["id"], NodeKind(n.get("kind", "device")),
                          bool(n.get("isolation", False)))
                 for n in raw.get("nodes", [])]
        links = []
        for l in raw.get("links", []):
            spec = LinkSpec(l["src"], l["dst"], l.get("delay", 0.0), l.get("loss", 0.0),
                            [(float(s), float(e)) for s, e in l.get("contested", [])])
            links.append(spec)
            if l.get("bidirectional"):
                links.append(LinkSpec(l["dst"], l["src"], spec.delay, spec.loss,
                                      [(float(s), float(e))
                                       for s, e in l.get("contested_reverse", [])]))
        routes = {}
        for key, paths in raw.get("routes", {}).items():
            src, _, dst = key.partition("->")
            routes[(src, dst)] = [list(p) for p in paths]
        signatures = [SignatureSpec(s["id"], _signature_bytes(s), s.get("weight", 0.7))
                      for s in raw.get("signatures", [])]
        log_rules = [LogRule(r["id"], LogEventKind(r["kind"]), r.get("threshold", 1),
                             r.get("window", 60.0), r.get("weight", 0.5))
                     for r in raw.get("log_rules", [])]
        blue_agents = [BlueSpec(b["id"], b["node"], list(b.get("peers", [])),
                                _policy_from(b.get("policy", {})),
                                b.get("response_latency", 0.0))
                       for b in raw.get("blue_agents", [])]
        c2_raw = raw.get("c2", {})
        c2 = C2Spec(c2_raw.get("id", "Blue-C2"), c2_raw.get("node", "c2-node"),
                    c2_raw.get("processing_latency", 0.1),
                    c2_raw.get("deferral_deadline", 30.0),
                    c2_raw.get("operator_latency", 5.0))
        red = None
        if raw.get("red"):
            r = raw["red"]
            compromised = None
            if r.get("compromised_blue"):
                cb = r["compromised_blue"]
                compromised = (cb["agent"], float(cb.get("at", 0.0)))
            red = RedSpec(r.get("id", "Red-35"), r["entry_node"], r["target_site"],
                          r.get("infiltrate_at", 0.1), r.get("first_beacon_delay", 0.1),
                          r.get("beacon_period", 1.0), r.get("payload_pattern"),
                          r.get("payload_hex"), r.get("corruption", 0.0), compromised,
                          r.get("log_noise", False), r.get("log_noise_period", 2.0))
        benign = [BenignFlowSpec(b["src"], b["dst"], b["period"], b.get("start", 0.0),
                                 b.get("payload_hex"), b.get("payload_random", 0))
                  for b in raw.get("benign_traffic", [])]
        trust_raw = raw.get("trust", {})
        trust = TrustSpec(trust_raw.get("quorum", 0),
                          list(trust_raw.get("eligible_approvers", [])),
                          list(trust_raw.get("boundary", [])) or [n.id for n in nodes])
        joins = [JoinSpec(j["at"], j["node"], dict(j.get("facts", {})))
                 for j in raw.get("joins", [])]
        migrations = [MigrationSpec(m["at"], m["agent"], m["to_node"])
                      for m in raw.get("migrations", [])]
        transfers = [TransferSpec(t["at"], t["by"], t["to_node"],
                                  list(t.get("approvals", [])))
                     for t in raw.get("transfers", [])]
        messaging_raw = raw.get("messaging", {})
        messaging = MessagingSpec(
            messaging_raw.get("segment_size", 64),
            messaging_raw.get("min_segments", 3),
            messaging_raw.get("blend_ratio", 1.0),
            messaging_raw.get("freshness_window", 60.0),
            messaging_raw.get("epoch_length", 30.0),
            messaging_raw.get("address_space", 65536),
        )
        config = ScenarioConfig(
            name=raw.get("name", Path(source).stem),
            seed=int(raw.get("seed", 42)),
            duration=float(raw.get("duration", 30.0)),
            nodes=nodes, links=links, routes=routes, signatures=signatures,
            gram_size=int(raw.get("gram_size", 8)), log_rules=log_rules,
            messaging=messaging, blue_agents=blue_agents, c2=c2, red=red,
            benign_traffic=benign, trust=trust,
            comply_required=list(raw.get("comply_required", [])),
            joins=joins, migrations=migrations, transfers=transfers,
        )
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{source}: bad scenario field: {exc}") from exc
    validate_scenario(config, source)
    return config


def validate_scenario(config: ScenarioConfig, source: str = "<memory>") -> None:
    def fail(message: str) -> None:
        raise ValidationError(f"{source}: {message}")

    node_ids = {n.id for n in config.nodes}
    if len(node_ids) != len(config.nodes):
        fail("duplicate node ids")
    link_pairs = set()
    for link in config.links:
        for end in (link.src, link.dst):
            if end not in node_ids:
                fail(f"link {link.src}->{link.dst} references unknown node {end!r}")
        link_pairs.add((link.src, link.dst))
    for (src, dst), paths in config.routes.items():
        for path in paths:
            if path[0] != src or path[-1] != dst:
                fail(f"route {path} does not run {src} -> {dst}")
            for hop in path:
                if hop not in node_ids:
                    fail(f"route {path} references unknown node {hop!r}")
            for a, b in zip(path, path[1:]):
                if (a, b) not in link_pairs:
                    fail(f"route {path} uses missing link {a}->{b}")
    agent_ids = {b.id for b in config.blue_agents} | {config.c2.id}
    for blue in config.blue_agents:
        if blue.node not in node_ids:
            fail(f"agent {blue.id} placed on unknown node {blue.node!r}")
        for peer in blue.peers:
            if peer not in agent_ids:
                fail(f"agent {blue.id} lists unknown peer {peer!r}")
    if config.c2.node not in node_ids:
        fail(f"c2 node {config.c2.node!r} unknown")
    if config.red:
        for ref in (config.red.entry_node, config.red.target_site):
            if ref not in node_ids:
                fail(f"red behavior references unknown node {ref!r}")
        if config.red.payload_pattern and config.red.payload_pattern not in {
                s.id for s in config.signatures}:
            fail(f"red payload pattern {config.red.payload_pattern!r} is not a signature id")
        if config.red.compromised_blue and config.red.compromised_blue[0] not in agent_ids:
            fail(f"compromised agent {config.red.compromised_blue[0]!r} unknown")
    for flow in config.benign_traffic:
        for end in (flow.src, flow.dst):
            if end not in node_ids:
                fail(f"benign flow references unknown node {end!r}")
    if not config.trust.boundary:
        fail("boundary must authorize at least one node")
    for migration in config.migrations:
        if migration.to_node not in node_ids:
            fail(f"migration targets unknown node {migration.to_node!r}")
        if migration.agent not in agent_ids:
            fail(f"migration moves unknown agent {migration.agent!r}")
    for transfer in config.transfers:
        if transfer.to_node not in node_ids:
            fail(f"transfer targets unknown node {transfer.to_node!r}")
        if transfer.by not in agent_ids:
            fail(f"transfer initiated by unknown agent {transfer.by!r}")
    if config.trust.quorum > 0 and not config.trust.eligible_approvers:
        fail("quorum > 0 requires eligible approvers")


def loads_scenario(text: str, source: str = "<memory>") -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{source}: scenario must be a JSON object")
    return parse_scenario(raw, source)


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such scenario file")
    return loads_scenario(path.read_text(), str(path))


def builtin_scenario_path(name: str) -> Path:
    ref = resources.files("bluesim").joinpath("scenarios", f"{name}.json")
    with resources.as_file(ref) as concrete:
        return Path(concrete)


def load_builtin(name: str) -> ScenarioConfig:
    text = resources.files("bluesim").joinpath("scenarios", f"{name}.json").read_text()
    return loads_scenario(text, f"builtin:{name}")
