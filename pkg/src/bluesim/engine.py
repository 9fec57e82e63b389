"""Wires agents, c2, adversary and traffic onto the deterministic kernel.

The engine owns all runtime state: agent state machines, key registries,
fragment inboxes, honeypot/block/quarantine effects, lesson stores and the
central repository. It translates agent actions into kernel events and
enforces the global safety assertions after every dispatched event.

Trace event kinds produced here (the JSONL vocabulary):
  lifecycle   agent-start, agent-corrupted, corruption-rejected,
              device-compromise, infiltration, self-destruct
  detection   log-event, detection
  red         red-beacon, beacon-delivered, beacon-lost, beacon-blocked,
              honeypot-capture
  benign      benign-send, benign-delivered, benign-blocked, benign-captured,
              benign-lost
  messaging   c2-request-sent, peer-query-sent, peer-response-sent,
              c2-response-sent, revocation-sent, fragment-relayed,
              fragment-delivered, fragment-dropped, fragment-blocked,
              no-route, c2-request-received, peer-query-received,
              verification-failed, verification-stale, response-applied,
              late-corroboration, revocation-received
  decisions   timer-fired, acting-alone, coa-log-only, coa-deferred,
              honeypot-isolated, flow-blocked, coa-ordered
  c2          deferral-created, deferral-resolved, deferral-expired
  transfer    quarantine, trust-revoked, overwrite-sent, transfer-authorized,
              transfer-denied, boundary-check, agent-installed, migration,
              join-admitted, join-rejected
  memory      lesson-recorded, repo-sync
"""

from __future__ import annotations

import copy
import hashlib
from typing import Optional

from . import blue as bl
from . import c2 as c2mod
from .coa import CoaKind, CourseOfAction
from .ids import (DetectionEvent, LogEvent, LogEventKind, SignatureDb,
                  compile_signatures, fuse_confidence, scan_log, scan_payload)
from .kernel import (Delivered, EventRecord, Link, Node, SimTime, Simulator,
                     Topology, trace_to_jsonl)
from .learning import (ActionValueTable, LessonRecord, LessonStore, Outcome, Repository,
                       record_outcome, sync_to_repository, threat_digest)
from .messaging import (AgentMessage, C2Schedule, Fragment, KeyRing, MessageType,
                        SealedMessage, c2_address, fragment, open_sealed, reassemble,
                        route_for, seal)
from .red import KeyCompromise, RedBehavior, build_beacon_payload
from .scenario import ScenarioConfig
from .trust import (BoundarySpec, BoundaryVerdict, Deny, Evidence, Rejected,
                    TransferPolicy, TrustLevel, TrustRecord, authorize_transfer,
                    check_boundary, comply_to_connect, evaluate_trust)


class EngineError(Exception):
    pass


class OutOfBoundsViolation(AssertionError):
    """A live agent survived an event while outside the authorized boundary."""


class DecisionProvider:
    """Source of operator decisions for deferrals. Returns (decision, rationale) or None."""

    def decide(self, deferral_view: dict) -> Optional[tuple[str, str]]:
        raise NotImplementedError


class NullDecisionProvider(DecisionProvider):
    def decide(self, deferral_view: dict) -> Optional[tuple[str, str]]:
        return None


class ScriptDecisionProvider(DecisionProvider):
    """Replays decisions from a list of {deferral_id?, decision, rationale} entries."""

    def __init__(self, decisions: list[dict]) -> None:
        self.decisions = list(decisions)

    def decide(self, deferral_view: dict) -> Optional[tuple[str, str]]:
        for i, entry in enumerate(self.decisions):
            wanted = entry.get("deferral_id")
            if wanted is None or wanted == deferral_view["deferral_id"]:
                self.decisions.pop(i)
                return entry["decision"], entry.get("rationale", "")
        return None


_COA_EVENT_KINDS = {
    CoaKind.LOG_ONLY: "coa-log-only",
    CoaKind.DEFER: "coa-deferred",
    CoaKind.HONEYPOT_ISOLATE: "honeypot-isolated",
    CoaKind.BLOCK: "flow-blocked",
}


class Engine:
    def __init__(self, config: ScenarioConfig, seed_override: Optional[int] = None,
                 decision_provider: Optional[DecisionProvider] = None) -> None:
        self.config = config
        self.seed = seed_override if seed_override is not None else config.seed
        self.provider = decision_provider or NullDecisionProvider()

        topology = Topology()
        for spec in config.nodes:
            topology.add_node(Node(spec.id, spec.kind, spec.isolation))
        for spec in config.links:
            topology.add_link(Link(spec.src, spec.dst, spec.delay, spec.loss,
                                   [(SimTime.from_seconds(s), SimTime.from_seconds(e))
                                    for s, e in spec.contested]))
        self.sim = Simulator(topology, self.seed)
        self.topology = topology

        self.db: SignatureDb = compile_signatures(
            [(s.id, s.pattern, s.weight) for s in config.signatures], config.gram_size)
        self.fragment_policy = config.messaging.fragment_policy()
        self.c2_schedule = C2Schedule(self._derive_key("c2-seed"),
                                      config.messaging.epoch_length,
                                      config.messaging.address_space)
        self.boundary = BoundarySpec(frozenset(config.trust.boundary))
        self.transfer_policy = TransferPolicy(config.trust.quorum,
                                              frozenset(config.trust.eligible_approvers))
        for node in topology.nodes.values():
            node.in_bounds = check_boundary(node.id, self.boundary) is BoundaryVerdict.IN_BOUNDS

        # key registry: honest keys are what peers registered; an agent's
        # current key diverges from it when red swaps it
        agent_ids = [b.id for b in config.blue_agents] + [config.c2.id]
        self.honest_keys: dict[str, bytes] = {a: self._derive_key(f"key:{a}") for a in agent_ids}
        self.current_keys: dict[str, bytes] = dict(self.honest_keys)
        self.nonces: dict[str, int] = {a: 0 for a in agent_ids}

        self.blue_states: dict[str, bl.BlueAgentState] = {}
        for spec in config.blue_agents:
            peer_nodes = {p: self._node_of_agent_spec(p) for p in spec.peers}
            state = bl.BlueAgentState(
                agent_id=spec.id, node_id=spec.node, policy=spec.policy,
                keyring=self._make_keyring(spec.id), peer_nodes=peer_nodes,
                response_latency=spec.response_latency)
            self.blue_states[spec.id] = state
            topology.nodes[spec.node].installed_agents.add(spec.id)

        self.c2_state = c2mod.C2State(
            c2_id=config.c2.id, node_id=config.c2.node, schedule=self.c2_schedule,
            deferral_deadline=config.c2.deferral_deadline)
        self.c2_keyring = self._make_keyring(config.c2.id)
        topology.nodes[config.c2.node].installed_agents.add(config.c2.id)

        self.red: Optional[RedBehavior] = self._build_red() if config.red else None

        self.repository = Repository()
        self.stores: dict[str, LessonStore] = {a: LessonStore(a) for a in agent_ids}
        self.tables: dict[str, ActionValueTable] = {a: ActionValueTable() for a in agent_ids}
        self.c2_state.table = self.tables[config.c2.id]

        # transport + effect state
        self.inboxes: dict[str, list[Fragment]] = {}
        self.handled: dict[str, set[bytes]] = {}
        self.msg_origin: dict[tuple[str, bytes], str] = {}
        self.timers: dict[tuple[str, str], object] = {}
        self.honeypots: dict[str, str] = {}      # flow -> isolating agent
        self.blocked_flows: dict[str, str] = {}  # flow -> blocking agent
        self.blocked_nodes: set[str] = set()
        self.compromised_nodes: set[str] = set()
        self.quarantined: set[str] = set()
        self.removed: set[str] = set()
        self.node_logs: dict[str, list[LogEvent]] = {n.id: [] for n in config.nodes}
        self.seen_threats: set[tuple[str, tuple[str, ...]]] = set()
        self.lesson_once: set[tuple[str, str]] = set()
        self.approvals_pool: set[str] = set()

        self.sim.add_post_dispatch_check(self._assert_boundaries)
        self._schedule_setup()

    # --- construction helpers -------------------------------------------

    def _derive_key(self, label: str) -> bytes:
        return hashlib.blake2b(f"{self.seed}:{label}".encode(), digest_size=32).digest()

    def _node_of_agent_spec(self, agent_id: str) -> str:
        if agent_id == self.config.c2.id:
            return self.config.c2.node
        for spec in self.config.blue_agents:
            if spec.id == agent_id:
                return spec.node
        raise EngineError(f"unknown agent {agent_id!r}")

    def _make_keyring(self, owner: str) -> KeyRing:
        peers = {a: k for a, k in self.honest_keys.items() if a != owner}
        return KeyRing(own_id=owner, own_signing_key=self.honest_keys[owner],
                       peer_verify_keys=peers, c2_seed=self.c2_schedule.shared_seed)

    def _build_red(self) -> RedBehavior:
        spec = self.config.red
        assert spec is not None
        if spec.payload_hex:
            payload = bytes.fromhex(spec.payload_hex)
        elif spec.payload_pattern:
            pattern = next(s.pattern for s in self.config.signatures
                           if s.id == spec.payload_pattern)
            payload = build_beacon_payload(pattern, spec.corruption, self.config.gram_size,
                                           self.sim.stream("red:payload"))
        else:
            payload = self.sim.stream("red:payload").bytes(96)
        compromised = None
        if spec.compromised_blue:
            compromised = KeyCompromise(spec.compromised_blue[0],
                                        SimTime.from_seconds(spec.compromised_blue[1]))
        return RedBehavior(spec.id, spec.entry_node, spec.target_site,
                           SimTime.from_seconds(spec.infiltrate_at),
                           spec.first_beacon_delay, spec.beacon_period, payload,
                           compromised, spec.log_noise, spec.log_noise_period)

    # --- setup scheduling -------------------------------------------------

    def _schedule_setup(self) -> None:
        end = SimTime.from_seconds(self.config.duration)
        for spec in self.config.blue_agents:
            self.sim.schedule(SimTime(0), "agent-start", node=spec.node, agent=spec.id,
                              details={"monitoring": ["network", "logs"],
                                       "mode": spec.policy.mode.value})
        if self.red is not None:
            red = self.red
            if red.compromised_blue is not None:
                comp = red.compromised_blue
                self.sim.schedule(comp.at, "agent-corruption", agent=red.red_id,
                                  details={"target": comp.agent_id},
                                  action=lambda rec, c=comp: self.corrupt_blue_agent(
                                      c.agent_id, granted=True))
            self.sim.schedule(red.infiltrate_at, "device-compromise",
                              node=red.entry_node, agent=red.red_id,
                              details={"entry": red.entry_node},
                              action=self._on_device_compromise)
            self.sim.schedule(red.infiltrate_at, "infiltration",
                              node=red.entry_node, agent=red.red_id,
                              details={"noticed": False})
            for t in red.beacon_times(end):
                self.sim.schedule(t, "red-beacon", node=red.entry_node, agent=red.red_id,
                                  details={"flow": f"{red.entry_node}->{red.target_site}",
                                           "bytes": len(red.beacon_payload)},
                                  action=self._on_beacon)
            if red.log_noise:
                t = red.infiltrate_at.plus_seconds(red.log_noise_period)
                while t <= end:
                    self.sim.schedule(t, "log-event", node=red.entry_node,
                                      details={"kind": LogEventKind.PRIVILEGE_ESCALATION.value},
                                      action=self._on_log_event)
                    t = t.plus_seconds(red.log_noise_period)
        for i, flow in enumerate(self.config.benign_traffic):
            payload = bytes.fromhex(flow.payload_hex) if flow.payload_hex \
                else self.sim.stream(f"benign:{i}").bytes(flow.payload_random or 64)
            t = SimTime.from_seconds(flow.start)
            while t <= end:
                self.sim.schedule(t, "benign-send", node=flow.src,
                                  details={"flow": f"{flow.src}->{flow.dst}"},
                                  action=lambda rec, f=flow, p=payload: self._on_benign(rec, f, p))
                t = t.plus_seconds(flow.period)
        for join in self.config.joins:
            self.sim.schedule(SimTime.from_seconds(join.at), "join-request",
                              node=join.node, details={"facts": join.facts},
                              action=lambda rec, j=join: self._on_join(j))
        for migration in self.config.migrations:
            self.sim.schedule(SimTime.from_seconds(migration.at), "migration",
                              node=migration.to_node, agent=migration.agent,
                              details={"to": migration.to_node, "forced": True},
                              action=lambda rec, m=migration: self._on_migration(m))
        for transfer in self.config.transfers:
            self.sim.schedule(SimTime.from_seconds(transfer.at), "transfer-request",
                              node=transfer.to_node, agent=transfer.by,
                              details={"to": transfer.to_node,
                                       "approvals": sorted(transfer.approvals)},
                              action=lambda rec, t=transfer: self._on_transfer_request(t))
        for agent_id in list(self.stores):
            self.sim.schedule(end, "repo-sync", agent=agent_id,
                              node=self._node_of(agent_id),
                              details={}, action=self._on_repo_sync)

    # --- run ---------------------------------------------------------------

    def run(self) -> list[EventRecord]:
        return self.sim.run_until(SimTime.from_seconds(self.config.duration))

    def trace_jsonl(self) -> str:
        return trace_to_jsonl(self.sim.trace)

    # --- invariants ---------------------------------------------------------

    def _assert_boundaries(self, record: EventRecord) -> None:
        for agent_id, state in self.blue_states.items():
            if agent_id in self.removed:
                continue
            if check_boundary(state.node_id, self.boundary) is BoundaryVerdict.OUT_OF_BOUNDS:
                raise OutOfBoundsViolation(
                    f"agent {agent_id} live on out-of-bounds node {state.node_id} "
                    f"after event {record.kind} at {record.t.format()}")

    # --- red ----------------------------------------------------------------

    def corrupt_blue_agent(self, target: str, granted: bool) -> bool:
        """Swap the target's signing key for an attacker key (scenario-granted)."""
        state = self.blue_states.get(target)
        if state is None:
            return False
        node = self.topology.nodes[state.node_id]
        if node.isolation and not granted:
            self.sim.emit("corruption-rejected", node=node.id, agent=target,
                          details={"reason": "agent container is isolated"})
            return False
        attacker_key = self._derive_key(f"attacker:{target}")
        state.keyring.own_signing_key = attacker_key
        self.current_keys[target] = attacker_key
        self.sim.emit("agent-corrupted", node=node.id, agent=target,
                      details={"granted": granted})
        return True

    def _on_device_compromise(self, record: EventRecord) -> None:
        node = self.topology.nodes[record.node]
        resident = sorted(a for a in node.installed_agents if a in self.blue_states)
        before = [bl.state_digest(self.blue_states[a]) for a in resident]
        self.compromised_nodes.add(node.id)
        after = [bl.state_digest(self.blue_states[a]) for a in resident]
        if node.isolation and before != after:
            raise EngineError(f"isolation breached on {node.id}")

    def _on_beacon(self, record: EventRecord) -> None:
        red = self.red
        assert red is not None
        flow = f"{red.entry_node}->{red.target_site}"
        self._scan_traffic(red.entry_node, red.beacon_payload, flow)
        if flow in self.blocked_flows:
            self.sim.emit("beacon-blocked", node=red.entry_node, agent=red.red_id,
                          details={"flow": flow})
            self._record_lesson_once(self.blocked_flows[flow], CoaKind.BLOCK, flow)
            return
        if flow in self.honeypots:
            self.sim.emit("honeypot-capture", node=red.entry_node,
                          agent=self.honeypots[flow], details={"flow": flow})
            self._record_lesson_once(self.honeypots[flow], CoaKind.HONEYPOT_ISOLATE, flow)
            return
        result = self.sim.transmit(len(red.beacon_payload), red.entry_node, red.target_site)
        if isinstance(result, Delivered):
            self.sim.schedule(result.at, "beacon-delivered", node=red.target_site,
                              agent=red.red_id, details={"flow": flow})
        else:
            self.sim.emit("beacon-lost", node=red.entry_node, agent=red.red_id,
                          details={"flow": flow})

    def _on_log_event(self, record: EventRecord) -> None:
        node_id = record.node
        kind = LogEventKind(record.details["kind"])
        self.node_logs[node_id].append(LogEvent(record.t, kind))
        agent_id = self._monitoring_agent(node_id)
        if agent_id is None or not self.config.log_rules:
            return
        fired = [(rule_id, count) for rule_id, is_fired, count
                 in scan_log(self.config.log_rules, self.node_logs[node_id], record.t)
                 if is_fired]
        if not fired:
            return
        weights = {r.rule_id: r.weight for r in self.config.log_rules}
        confidence = fuse_confidence((weights[rid], 1.0) for rid, _ in fired)
        matched = tuple(rid for rid, _ in fired)
        self._raise_detection(agent_id, node_id, "log", matched, confidence,
                              f"{node_id}->logs", record.t)

    def _on_benign(self, record: EventRecord, flow_spec, payload: bytes) -> None:
        flow = f"{flow_spec.src}->{flow_spec.dst}"
        self._scan_traffic(flow_spec.src, payload, flow)
        if flow in self.blocked_flows:
            self.sim.emit("benign-blocked", node=flow_spec.src, details={"flow": flow})
            return
        if flow in self.honeypots:
            self.sim.emit("benign-captured", node=flow_spec.src, details={"flow": flow})
            return
        result = self.sim.transmit(len(payload), flow_spec.src, flow_spec.dst)
        if isinstance(result, Delivered):
            self.sim.schedule(result.at, "benign-delivered", node=flow_spec.dst,
                              details={"flow": flow})
        else:
            self.sim.emit("benign-lost", node=flow_spec.src, details={"flow": flow})

    # --- detection ------------------------------------------------------------

    def _monitoring_agent(self, node_id: str) -> Optional[str]:
        agents = sorted(a for a in self.topology.nodes[node_id].installed_agents
                        if a in self.blue_states and a not in self.quarantined
                        and a not in self.removed)
        return agents[0] if agents else None

    def _scan_traffic(self, node_id: str, payload: bytes, flow: str) -> None:
        agent_id = self._monitoring_agent(node_id)
        if agent_id is None:
            return
        matches = scan_payload(self.db, payload)
        if not matches:
            return
        weights = {pid: self.db.patterns[pid].weight for pid, _ in matches}
        confidence = fuse_confidence((weights[pid], frac) for pid, frac in matches)
        matched = tuple(pid for pid, _ in matches)
        self._raise_detection(agent_id, node_id, "network", matched, confidence,
                              flow, self.sim.now, payload)

    def _raise_detection(self, agent_id: str, node_id: str, source: str,
                         matched: tuple[str, ...], confidence: float, flow: str,
                         at: SimTime, payload: bytes = b"") -> None:
        key = (node_id, matched)
        if key in self.seen_threats:
            return  # identical evidence already raised for this node
        self.seen_threats.add(key)
        digest = hashlib.blake2b(payload or repr(matched).encode(),
                                 digest_size=16).hexdigest()
        detection = DetectionEvent(source, matched, confidence, at, node_id, digest)
        self.sim.emit("detection", node=node_id, agent=agent_id,
                      details={"source": source, "matched": list(matched),
                               "confidence": confidence, "flow": flow},
                      action=lambda rec: self._agent_event(
                          agent_id, bl.DetectionSeen(detection, flow)))

    # --- agent event plumbing ---------------------------------------------

    def _agent_event(self, agent_id: str, event: bl.AgentEvent) -> None:
        state = self.blue_states.get(agent_id)
        if state is None or agent_id in self.quarantined or agent_id in self.removed:
            return
        _, actions = bl.step(state, event, self.sim.now)
        self._execute(agent_id, actions)

    def _execute(self, agent_id: str, actions: list[bl.AgentAction]) -> None:
        state = self.blue_states[agent_id]
        for action in actions:
            if isinstance(action, bl.SendMessage):
                self.send_agent_message(agent_id, action.recipient, action.msg_type,
                                        action.body, action.delay, action.trace_kind)
            elif isinstance(action, bl.StartTimer):
                at = self.sim.now.plus_seconds(action.delay)
                handle = self.sim.schedule(
                    at, "timer-fired", node=state.node_id, agent=agent_id,
                    details={"name": action.name},
                    action=lambda rec, n=action.name: self._agent_event(
                        agent_id, bl.TimerFired(n)))
                self.timers[(agent_id, action.name)] = handle
            elif isinstance(action, bl.CancelTimer):
                handle = self.timers.pop((agent_id, action.name), None)
                if handle is not None:
                    self.sim.cancel(handle)
            elif isinstance(action, bl.ApplyCoa):
                self._schedule_coa(agent_id, action.coa, action.delay)
            elif isinstance(action, bl.QuarantinePeer):
                self._do_quarantine(agent_id, action.peer)
            elif isinstance(action, bl.InitiateOverwrite):
                self._do_overwrite(agent_id, action.peer)
            elif isinstance(action, bl.RecordCorroboration):
                self._record_lesson(agent_id, action.coa_kind, Outcome.SUCCESS,
                                    f"corroborated by {action.from_agent}")
            elif isinstance(action, bl.TraceNote):
                self.sim.emit(action.kind, node=state.node_id, agent=agent_id,
                              details=action.details)
            else:
                raise EngineError(f"unknown agent action {action!r}")

    def _schedule_coa(self, agent_id: str, coa: CourseOfAction, delay: float) -> None:
        state = self.blue_states[agent_id]
        if coa.kind in (CoaKind.QUARANTINE, CoaKind.OVERWRITE):
            self.sim.schedule(
                self.sim.now.plus_seconds(delay), "coa-ordered", node=state.node_id,
                agent=agent_id, details={"coa": coa.kind.value, "target": coa.target},
                action=lambda rec: self._apply_destructive(agent_id, coa))
            return
        kind = _COA_EVENT_KINDS[coa.kind]
        self.sim.schedule(
            self.sim.now.plus_seconds(delay), kind, node=state.node_id, agent=agent_id,
            details={"target": coa.target, "rationale": coa.rationale},
            action=lambda rec: self._apply_coa(agent_id, coa))

    def _apply_coa(self, agent_id: str, coa: CourseOfAction) -> None:
        if coa.kind is CoaKind.HONEYPOT_ISOLATE and coa.target:
            self.honeypots[coa.target] = agent_id
        elif coa.kind is CoaKind.BLOCK and coa.target:
            self.blocked_flows[coa.target] = agent_id
        self._agent_event(agent_id, bl.CoaExecuted(coa))

    def _apply_destructive(self, agent_id: str, coa: CourseOfAction) -> None:
        assert coa.target is not None
        if coa.kind is CoaKind.QUARANTINE:
            # an instructed quarantine may target a peer this agent has not
            # itself caught misbehaving; the instruction is the evidence
            state = self.blue_states[agent_id]
            record = state.trust.setdefault(coa.target, TrustRecord(subject=coa.target))
            if record.level is TrustLevel.TRUSTED:
                state.trust[coa.target] = evaluate_trust(
                    record, Evidence.INSTRUCTED_SUSPECT, self.sim.now, coa.rationale)
            self._do_quarantine(agent_id, coa.target)
        else:
            self._do_overwrite(agent_id, coa.target)
        self._agent_event(agent_id, bl.CoaExecuted(coa))

    # --- messaging --------------------------------------------------------

    def _node_of(self, agent_id: str) -> Optional[str]:
        if agent_id == self.c2_state.c2_id:
            return self.c2_state.node_id
        state = self.blue_states.get(agent_id)
        return state.node_id if state else None

    def routes_between(self, src: str, dst: str) -> Optional[list[list[str]]]:
        configured = self.config.routes.get((src, dst))
        if configured:
            return configured
        if (src, dst) in self.topology.links:
            return [[src, dst]]
        return None

    def send_agent_message(self, sender: str, recipient: str, msg_type: MessageType,
                           body: dict, delay: float, trace_kind: str) -> None:
        at = self.sim.now.plus_seconds(delay)
        self.sim.schedule(at, trace_kind, node=self._node_of(sender), agent=sender,
                          details=self._send_details(sender, recipient, msg_type, at),
                          action=lambda rec: self._do_send(sender, recipient,
                                                           msg_type, body))

    def _send_details(self, sender: str, recipient: str, msg_type: MessageType,
                      at: SimTime) -> dict:
        details = {"to": self.c2_state.c2_id if recipient == "c2" else recipient,
                   "type": msg_type.value}
        if recipient in ("c2", self.c2_state.c2_id):
            # the hopping address for the send instant; every seed holder
            # computes the same value
            details["c2_address"] = c2_address(self.c2_schedule, at)
        return details

    def _do_send(self, sender: str, recipient: str, msg_type: MessageType,
                 body: dict) -> None:
        recipient_id = self.c2_state.c2_id if recipient == "c2" else recipient
        src_node = self._node_of(sender)
        dst_node = self._node_of(recipient_id)
        if src_node is None or dst_node is None:
            self.sim.emit("no-route", agent=sender,
                          details={"to": recipient_id, "reason": "endpoint gone"})
            return
        self.nonces[sender] = self.nonces.get(sender, 0) + 1
        msg = AgentMessage(msg_type, sender, recipient_id, self.sim.now,
                           self.nonces[sender], body)
        sealed = seal(msg, self.current_keys[sender])
        routes = self.routes_between(src_node, dst_node)
        if routes is None:
            self.sim.emit("no-route", agent=sender, node=src_node,
                          details={"to": recipient_id, "dst_node": dst_node})
            return
        frags = fragment(sealed, self.fragment_policy, routes,
                         self.sim.stream(f"cover:{sender}"))
        for frag in frags:
            self._send_fragment(frag, route_for(routes, frag), 0)

    def _send_fragment(self, frag: Fragment, path: list[str], hop: int) -> None:
        src, dst = path[hop], path[hop + 1]
        if src in self.blocked_nodes or dst in self.blocked_nodes:
            self.sim.emit("fragment-blocked", node=src,
                          details={"src": src, "dst": dst, "cover": frag.cover})
            return
        result = self.sim.transmit(len(frag.payload), src, dst)
        detail = {"msg": frag.msg_id.hex()[:8], "index": frag.index,
                  "src": src, "dst": dst, "cover": frag.cover}
        if isinstance(result, Delivered):
            final = hop + 2 == len(path)
            kind = "fragment-delivered" if final else "fragment-relayed"
            self.sim.schedule(result.at, kind, node=dst, details=detail,
                              action=lambda rec: self._fragment_arrived(frag, path, hop))
        else:
            self.sim.emit("fragment-dropped", node=src, details=detail)

    def _fragment_arrived(self, frag: Fragment, path: list[str], hop: int) -> None:
        if hop + 2 < len(path):
            self._send_fragment(frag, path, hop + 1)
            return
        node_id = path[-1]
        prev = path[-2]
        inbox = self.inboxes.setdefault(node_id, [])
        handled = self.handled.setdefault(node_id, set())
        if frag.msg_id in handled:
            return
        self.msg_origin.setdefault((node_id, frag.msg_id), prev)
        inbox.append(frag)
        result = reassemble(inbox)
        if isinstance(result, SealedMessage):
            msg_id = result.digest()
            handled.add(msg_id)
            self.inboxes[node_id] = [f for f in inbox if f.msg_id != msg_id]
            from_node = self.msg_origin.get((node_id, msg_id), prev)
            self._consume_sealed(node_id, result, from_node)

    def _consume_sealed(self, node_id: str, sealed: SealedMessage, from_node: str) -> None:
        if node_id == self.c2_state.node_id:
            self._c2_receive(sealed, from_node)
            return
        agents = sorted(a for a in self.topology.nodes[node_id].installed_agents
                        if a in self.blue_states)
        for agent_id in agents:
            self._agent_event(agent_id, bl.SealedArrived(sealed, from_node, self.sim.now))

    # --- c2 ------------------------------------------------------------------

    def _c2_receive(self, sealed: SealedMessage, from_node: str) -> None:
        c2 = self.c2_state
        result = open_sealed(sealed, self.c2_keyring, self.sim.now,
                             self.config.messaging.freshness_window)
        if not isinstance(result, AgentMessage):
            self.sim.emit("verification-failed", node=c2.node_id, agent=c2.c2_id,
                          details={"from_node": from_node,
                                   "reason": getattr(result, "reason", "stale")})
            return
        msg = result
        if msg.msg_type is not MessageType.C2_REQUEST:
            self.sim.emit("unexpected-message", node=c2.node_id, agent=c2.c2_id,
                          details={"type": msg.msg_type.value, "from": msg.sender})
            return
        self.sim.emit("c2-request-received", node=c2.node_id, agent=c2.c2_id,
                      details={"from": msg.sender,
                               "confidence": msg.body.get("confidence")})
        requester_node = self._node_of(msg.sender) or from_node
        outcome = c2mod.handle_c2_request(c2, msg, requester_node, self.sim.now)
        if isinstance(outcome, c2mod.Respond):
            self._c2_respond(msg.sender, outcome.coa, msg.body.get("digest", ""))
        else:
            deferral = outcome.deferral
            self.sim.emit("deferral-created", node=c2.node_id, agent=c2.c2_id,
                          details=deferral.view())
            self._arrange_deferral(deferral)

    def _c2_respond(self, requester: str, coa: CourseOfAction, re_digest: str) -> None:
        self.send_agent_message(
            self.c2_state.c2_id, requester, MessageType.C2_RESPONSE,
            {"recommendation": coa.kind.value, "target": coa.target,
             "rationale": coa.rationale, "re": re_digest},
            self.config.c2.processing_latency, "c2-response-sent")

    def _arrange_deferral(self, deferral: c2mod.Deferral) -> None:
        decision = self.provider.decide(deferral.view())
        if decision is not None:
            verdict, rationale = decision
            at = self.sim.now.plus_seconds(self.config.c2.operator_latency)
            self.sim.schedule(
                at, "deferral-resolved", node=self.c2_state.node_id,
                agent=self.c2_state.c2_id,
                details={"deferral_id": deferral.deferral_id, "decision": verdict,
                         "rationale": rationale},
                action=lambda rec: self._resolve_deferral(deferral.deferral_id,
                                                          verdict, rationale))
        else:
            self.sim.schedule(
                deferral.deadline, "deferral-expired", node=self.c2_state.node_id,
                agent=self.c2_state.c2_id,
                details={"deferral_id": deferral.deferral_id},
                action=lambda rec: self._expire_deferral(deferral.deferral_id))

    def _resolve_deferral(self, deferral_id: int, verdict: str, rationale: str) -> None:
        deferral, coa = c2mod.resolve_deferral(self.c2_state, deferral_id,
                                               c2mod.Decision(verdict), rationale)
        self._c2_respond(deferral.requester, coa, deferral.threat_digest)

    def _expire_deferral(self, deferral_id: int) -> None:
        deferral, coa = c2mod.expire_deferral(self.c2_state, deferral_id)
        self._c2_respond(deferral.requester, coa, deferral.threat_digest)

    # --- quarantine / transfer / boundary ----------------------------------

    def _do_quarantine(self, by: str, peer: str) -> None:
        if peer in self.quarantined:
            return  # idempotent
        state = self.blue_states[by]
        changed, actions = bl.quarantine_peer(state, peer, self.sim.now)
        if not changed:
            return
        peer_node = self._node_of(peer)
        self.quarantined.add(peer)
        if peer_node is not None:
            self.blocked_nodes.add(peer_node)
        self.sim.emit("quarantine", node=peer_node, agent=by,
                      details={"target": peer, "traffic_blocked_at": peer_node})
        self._execute(by, actions)
        for other in state.trusted_peers():
            self.send_agent_message(by, other, MessageType.PEER_QUERY,
                                    {"kind": "revocation", "subject": peer},
                                    0.0, "revocation-sent")
        self._record_lesson(by, CoaKind.QUARANTINE, Outcome.SUCCESS,
                            f"quarantined {peer}")

    def _next_blue_id(self) -> str:
        numbers = [17]
        for agent_id in list(self.blue_states) + [self.c2_state.c2_id]:
            suffix = agent_id.rsplit("-", 1)[-1]
            if suffix.isdigit():
                numbers.append(int(suffix))
        return f"Blue-{max(numbers) + 1}"

    def _do_overwrite(self, by: str, peer: str) -> None:
        target_node_id = self._node_of(peer)
        if target_node_id is None:
            self.sim.emit("transfer-denied", agent=by,
                          details={"reason": "target-gone", "target": peer})
            return
        self._transfer_image(by, target_node_id, self.approvals_pool, replaces=peer)

    def _on_transfer_request(self, spec) -> None:
        self._transfer_image(spec.by, spec.to_node, set(spec.approvals), replaces=None)

    def _transfer_image(self, by: str, target_node_id: str, approvals: set[str],
                        replaces: Optional[str]) -> None:
        state = self.blue_states[by]
        new_id = self._next_blue_id()
        new_key = self._derive_key(f"key:{new_id}")
        self.nonces[by] = self.nonces.get(by, 0) + 1
        package_msg = AgentMessage(
            MessageType.OVERWRITE_PACKAGE, by, f"container:{target_node_id}",
            self.sim.now, self.nonces[by],
            {"new_agent": new_id, "verify_key": new_key.hex(), "image_of": by,
             "target_node": target_node_id, "replaces": replaces})
        package = seal(package_msg, self.current_keys[by])
        digest = package.digest().hex()
        self.sim.emit("overwrite-sent", node=state.node_id, agent=by,
                      details={"target_node": target_node_id, "new_agent": new_id,
                               "replaces": replaces, "package": digest[:16]})
        target_node = self.topology.nodes[target_node_id]
        container_ring = KeyRing(own_id=f"container:{target_node_id}",
                                 own_signing_key=b"\x00" * 32,
                                 peer_verify_keys=dict(self.honest_keys))
        verdict = authorize_transfer(
            package, target_node, approvals, self.transfer_policy, self.boundary,
            container_ring, self.sim.now)
        if isinstance(verdict, Deny):
            self.sim.emit("transfer-denied", node=target_node_id, agent=by,
                          details={"reason": verdict.reason, "detail": verdict.detail,
                                   "package": digest[:16]})
            return
        self.sim.emit("transfer-authorized", node=target_node_id, agent=by,
                      details={"package": digest[:16],
                               "approvals": sorted(approvals & self.transfer_policy.eligible_approvers),
                               "quorum": self.transfer_policy.quorum})
        install_at = self.sim.now.plus_seconds(state.policy.overwrite_latency)
        self.sim.schedule(install_at, "agent-installed", node=target_node_id,
                          agent=new_id,
                          details={"image_of": by, "replaces": replaces,
                                   "package": digest[:16]},
                          action=lambda rec: self._install_agent(
                              new_id, new_key, target_node_id, by, replaces))

    def _install_agent(self, new_id: str, new_key: bytes, node_id: str,
                       image_of: str, replaces: Optional[str]) -> None:
        verdict = check_boundary(node_id, self.boundary)
        self.sim.emit("boundary-check", node=node_id, agent=new_id,
                      details={"verdict": verdict.value, "occasion": "install"})
        if verdict is BoundaryVerdict.OUT_OF_BOUNDS:
            self.sim.emit("self-destruct", node=node_id, agent=new_id,
                          details={"reason": "installed out of bounds"})
            return
        node = self.topology.nodes[node_id]
        if replaces is not None:
            node.installed_agents.discard(replaces)
            self.removed.add(replaces)
            self.blocked_nodes.discard(node_id)
        source = self.blue_states[image_of]
        self.honest_keys[new_id] = new_key
        self.current_keys[new_id] = new_key
        self.nonces[new_id] = 0
        for st in self.blue_states.values():
            st.keyring.peer_verify_keys[new_id] = new_key
        self.c2_keyring.peer_verify_keys[new_id] = new_key
        peer_nodes = {image_of: source.node_id}
        for peer, pnode in source.peer_nodes.items():
            if peer not in (new_id, replaces) and peer not in self.quarantined:
                peer_nodes[peer] = pnode
        fresh = bl.BlueAgentState(
            agent_id=new_id, node_id=node_id,
            policy=copy.deepcopy(source.policy),
            keyring=self._make_keyring_for_new(new_id, new_key),
            peer_nodes=peer_nodes,
            response_latency=source.response_latency)
        self.blue_states[new_id] = fresh
        node.installed_agents.add(new_id)
        self.stores[new_id] = LessonStore(new_id)
        table = ActionValueTable(self.tables[image_of].alpha)
        table.entries = dict(self.tables[image_of].entries)
        self.tables[new_id] = table
        self._record_lesson(image_of, CoaKind.OVERWRITE, Outcome.SUCCESS,
                            f"re-imaged {node_id} as {new_id}")

    def _make_keyring_for_new(self, new_id: str, new_key: bytes) -> KeyRing:
        peers = {a: k for a, k in self.honest_keys.items() if a != new_id}
        return KeyRing(own_id=new_id, own_signing_key=new_key,
                       peer_verify_keys=peers, c2_seed=self.c2_schedule.shared_seed)

    def _on_migration(self, spec) -> None:
        state = self.blue_states.get(spec.agent)
        if state is None or spec.agent in self.removed:
            return
        self.topology.nodes[state.node_id].installed_agents.discard(spec.agent)
        state.node_id = spec.to_node
        self.topology.nodes[spec.to_node].installed_agents.add(spec.agent)
        verdict = check_boundary(spec.to_node, self.boundary)
        self.sim.emit("boundary-check", node=spec.to_node, agent=spec.agent,
                      details={"verdict": verdict.value, "occasion": "migration"})
        if verdict is BoundaryVerdict.OUT_OF_BOUNDS:
            self.topology.nodes[spec.to_node].installed_agents.discard(spec.agent)
            self.removed.add(spec.agent)
            self.sim.emit("self-destruct", node=spec.to_node, agent=spec.agent,
                          details={"reason": "migrated out of bounds"})

    def _on_join(self, spec) -> None:
        if self.topology.nodes[spec.node].installed_agents:
            self.sim.emit("join-rejected", node=spec.node,
                          details={"predicate": "not-already-a-member"})
            return
        result = comply_to_connect(spec.facts, self.config.comply_required)
        if isinstance(result, Rejected):
            self.sim.emit("join-rejected", node=spec.node,
                          details={"predicate": result.failed_predicate})
            return
        self.sim.emit("join-admitted", node=spec.node, details={"facts": spec.facts})
        sponsors = [a for a in self.blue_states
                    if a not in self.quarantined and a not in self.removed]
        if sponsors:
            self._transfer_image(sponsors[0], spec.node, set(), replaces=None)

    # --- lessons ----------------------------------------------------------

    def _record_lesson_once(self, agent_id: str, action: CoaKind, flow: str) -> None:
        key = (agent_id, f"{action.value}:{flow}")
        if key in self.lesson_once:
            return
        self.lesson_once.add(key)
        self._record_lesson(agent_id, action, Outcome.SUCCESS, f"contained {flow}")

    def _record_lesson(self, agent_id: str, action: CoaKind, outcome: Outcome,
                       note: str) -> None:
        state = self.blue_states.get(agent_id)
        threat = state.active_threat if state else None
        digest = threat_digest(threat.matched_ids if threat else ("none",),
                               threat.source if threat else "none")
        record = LessonRecord(digest, action, outcome, self.sim.now)
        self.stores[agent_id].add(record)
        record_outcome(self.tables[agent_id], record)
        self.sim.emit("lesson-recorded", agent=agent_id, node=self._node_of(agent_id),
                      details={"action": action.value, "outcome": outcome.value,
                               "note": note,
                               "q": str(self.tables[agent_id].value(digest, action))})

    def _on_repo_sync(self, record: EventRecord) -> None:
        agent_id = record.agent
        if agent_id in self.removed or agent_id not in self.stores:
            return
        node_id = self._node_of(agent_id)
        contested = True
        if node_id is not None:
            link = self.topology.links.get((node_id, self.c2_state.node_id))
            contested = link is None or link.loss_at(self.sim.now) >= 1.0
        if node_id == self.c2_state.node_id:
            contested = False
        uploaded = sync_to_repository(self.stores[agent_id], self.repository, contested)
        self.sim.emit("repo-sync", agent=agent_id, node=node_id,
                      details={"uploaded": uploaded, "contested": contested})
