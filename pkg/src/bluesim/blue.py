"""Defensive agent state machine: detect, escalate, fall back, act, re-image.

The transition function is deterministic in (state, event) and mutates the
passed state under kernel ownership; emitted actions are executed by the
engine (message sends, timers, course-of-action applications). Escalation is
structural: a qualifying detection always produces a c2 request first, then a
peer query on timeout, then an autonomous decision -- learned preferences
never reorder that ladder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .coa import CoaKind, CourseOfAction
from .ids import DetectionEvent
from .kernel import SimTime
from .messaging import (AgentMessage, KeyRing, MessageType, SealedMessage,
                        StaleTimestamp, open_sealed)
from .trust import Evidence, TrustLevel, TrustRecord, evaluate_trust


class BlueAgentError(Exception):
    pass


class Phase(str, Enum):
    MONITORING = "monitoring"
    AWAITING_C2 = "awaiting-c2"
    AWAITING_PEERS = "awaiting-peers"
    ACTING_ALONE = "acting-alone"
    POST_ACTION = "post-action"


class AutonomyMode(str, Enum):
    FULL = "full"
    SEMI = "semi"


@dataclass
class AutonomyPolicy:
    mode: AutonomyMode = AutonomyMode.FULL
    defer_threshold: float = 0.5
    act_threshold: float = 0.9
    c2_wait: float = 2.78
    peer_wait: float = 7.0
    act_latency: float = 2.0
    quarantine_latency: float = 5.0
    overwrite_latency: float = 0.3
    c2_request_latency: float = 0.02
    freshness_window: float = 60.0

    def __post_init__(self) -> None:
        if not 0.0 < self.defer_threshold < self.act_threshold <= 1.0:
            raise BlueAgentError(
                f"thresholds must satisfy 0 < defer ({self.defer_threshold}) "
                f"< act ({self.act_threshold}) <= 1")


@dataclass(frozen=True)
class DecisionContext:
    c2_reachable: bool = False
    human_available: bool = False
    target_flow: Optional[str] = None
    target_agent: Optional[str] = None


ESCALATION_TIMERS = ("c2-wait", "peer-wait")


@dataclass
class BlueAgentState:
    agent_id: str
    node_id: str
    policy: AutonomyPolicy
    keyring: KeyRing
    peer_nodes: dict[str, str]  # peer agent id -> host node id (config order)
    phase: Phase = Phase.MONITORING
    active_threat: Optional[DetectionEvent] = None
    active_flow: Optional[str] = None
    pending_timers: set[str] = field(default_factory=set)
    honeypot_active: bool = False
    trust: dict[str, TrustRecord] = field(default_factory=dict)
    chosen_coa: Optional[CourseOfAction] = None
    response_latency: float = 0.0  # delay before answering a peer query

    def __post_init__(self) -> None:
        for peer in self.peer_nodes:
            self.trust.setdefault(peer, TrustRecord(subject=peer))

    def trusted_peers(self) -> list[str]:
        return [p for p in self.peer_nodes
                if self.trust[p].level is TrustLevel.TRUSTED]

    def peer_on_node(self, node_id: str) -> Optional[str]:
        for peer, node in self.peer_nodes.items():
            if node == node_id:
                return peer
        return None

    def check_invariants(self) -> None:
        live_escalation = [t for t in self.pending_timers if t in ESCALATION_TIMERS]
        if len(live_escalation) > 1:
            raise BlueAgentError(f"{self.agent_id}: multiple escalation timers {live_escalation}")
        if self.phase is Phase.AWAITING_C2 and live_escalation != ["c2-wait"]:
            raise BlueAgentError(f"{self.agent_id}: awaiting-c2 without a live c2 timer")
        if self.phase is Phase.AWAITING_PEERS and live_escalation != ["peer-wait"]:
            raise BlueAgentError(f"{self.agent_id}: awaiting-peers without a live peer timer")
        if self.honeypot_active and self.phase not in (Phase.ACTING_ALONE, Phase.POST_ACTION):
            raise BlueAgentError(f"{self.agent_id}: honeypot active in phase {self.phase.value}")


# --- events delivered by the engine -----------------------------------------


@dataclass(frozen=True)
class DetectionSeen:
    detection: DetectionEvent
    flow: str  # "src->dst" of the suspicious traffic


@dataclass(frozen=True)
class TimerFired:
    name: str


@dataclass(frozen=True)
class SealedArrived:
    sealed: SealedMessage
    from_node: str
    now: SimTime


@dataclass(frozen=True)
class CoaExecuted:
    coa: CourseOfAction


AgentEvent = Union[DetectionSeen, TimerFired, SealedArrived, CoaExecuted]


# --- actions returned to the engine ------------------------------------------


@dataclass(frozen=True)
class SendMessage:
    msg_type: MessageType
    recipient: str
    body: dict
    delay: float = 0.0
    trace_kind: str = "message-sent"


@dataclass(frozen=True)
class StartTimer:
    name: str
    delay: float


@dataclass(frozen=True)
class CancelTimer:
    name: str


@dataclass(frozen=True)
class ApplyCoa:
    coa: CourseOfAction
    delay: float = 0.0


@dataclass(frozen=True)
class QuarantinePeer:
    peer: str


@dataclass(frozen=True)
class InitiateOverwrite:
    peer: str


@dataclass(frozen=True)
class RecordCorroboration:
    coa_kind: CoaKind
    from_agent: str


@dataclass(frozen=True)
class TraceNote:
    kind: str
    details: dict


AgentAction = Union[SendMessage, StartTimer, CancelTimer, ApplyCoa, QuarantinePeer,
                    InitiateOverwrite, RecordCorroboration, TraceNote]


def decide_course_of_action(confidence: float, policy: AutonomyPolicy,
                            context: DecisionContext) -> CourseOfAction:
    """Deterministic action choice from confidence bands.

    Below the defer threshold only log; in the middle band defer to a human
    when one can be reached in semiautonomous mode, otherwise contain in a
    honeypot; at high confidence block outright.
    """
    if not 0.0 <= confidence <= 1.0:
        raise BlueAgentError(f"confidence {confidence} outside [0,1]")
    flow = context.target_flow or "unknown->unknown"
    if confidence < policy.defer_threshold:
        return CourseOfAction(CoaKind.LOG_ONLY, rationale="confidence below defer threshold")
    if confidence < policy.act_threshold:
        if policy.mode is AutonomyMode.SEMI and context.human_available:
            return CourseOfAction(CoaKind.DEFER, rationale="moderate confidence, human available")
        return CourseOfAction(CoaKind.HONEYPOT_ISOLATE, target=flow,
                              rationale="moderate confidence, observe attacker in honeypot")
    return CourseOfAction(CoaKind.BLOCK, target=flow,
                          rationale="high confidence, block hostile flow")


@dataclass(frozen=True)
class Valid:
    message: AgentMessage


@dataclass(frozen=True)
class InvalidSignature:
    claimed_sender: Optional[str]
    reason: str


@dataclass(frozen=True)
class Stale:
    claimed_sender: Optional[str]
    age_seconds: float


VerifyResult = Union[Valid, InvalidSignature, Stale]


def verify_peer_response(state: BlueAgentState, sealed: SealedMessage, now: SimTime,
                         from_node: str) -> VerifyResult:
    """Open a response under this agent's keyring; attribute failures by arrival path."""
    result = open_sealed(sealed, state.keyring, now, state.policy.freshness_window)
    claimed = state.peer_on_node(from_node)
    if isinstance(result, AgentMessage):
        return Valid(result)
    if isinstance(result, StaleTimestamp):
        return Stale(claimed, result.age_seconds)
    return InvalidSignature(claimed, result.reason)


def _flag(state: BlueAgentState, peer: str, evidence: Evidence, now: SimTime,
          ref: str = "") -> None:
    record = state.trust.get(peer, TrustRecord(subject=peer))
    state.trust[peer] = evaluate_trust(record, evidence, now, ref)


def _threat_body(state: BlueAgentState) -> dict:
    threat = state.active_threat
    assert threat is not None
    return {
        "confidence": threat.confidence,
        "matched": list(threat.matched_ids),
        "source": threat.source,
        "subject": threat.subject,
        "digest": threat.payload_digest,
        "flow": state.active_flow,
        "mode": state.policy.mode.value,
    }


def step(state: BlueAgentState, event: AgentEvent,
         now: SimTime) -> tuple[BlueAgentState, list[AgentAction]]:
    actions: list[AgentAction] = []

    if isinstance(event, DetectionSeen):
        _on_detection(state, event.detection, event.flow, actions)
    elif isinstance(event, TimerFired):
        _on_timer(state, event.name, actions)
    elif isinstance(event, SealedArrived):
        _on_sealed(state, event, actions)
    elif isinstance(event, CoaExecuted):
        state.chosen_coa = event.coa
        if event.coa.kind is CoaKind.HONEYPOT_ISOLATE:
            state.honeypot_active = True
        if state.phase is Phase.ACTING_ALONE:
            state.phase = Phase.POST_ACTION
    else:
        actions.append(TraceNote("unknown-event", {"event": type(event).__name__}))

    state.check_invariants()
    return state, actions


def _on_detection(state: BlueAgentState, detection: DetectionEvent, flow: str,
                  actions: list[AgentAction]) -> None:
    policy = state.policy
    if state.phase is not Phase.MONITORING or state.active_threat is not None:
        return  # one active threat at a time; repeats of it are absorbed
    if detection.confidence < policy.defer_threshold:
        actions.append(ApplyCoa(CourseOfAction(CoaKind.LOG_ONLY,
                                               rationale="below defer threshold")))
        return
    state.active_threat = detection
    state.active_flow = flow
    state.phase = Phase.AWAITING_C2
    state.pending_timers.add("c2-wait")
    actions.append(SendMessage(MessageType.C2_REQUEST, "c2", _threat_body(state),
                               delay=policy.c2_request_latency,
                               trace_kind="c2-request-sent"))
    actions.append(StartTimer("c2-wait", policy.c2_request_latency + policy.c2_wait))


def _on_timer(state: BlueAgentState, name: str, actions: list[AgentAction]) -> None:
    if name not in state.pending_timers:
        return  # already cancelled
    state.pending_timers.discard(name)
    policy = state.policy

    if name == "c2-wait" and state.phase is Phase.AWAITING_C2:
        state.phase = Phase.AWAITING_PEERS
        for peer in state.trusted_peers():
            actions.append(SendMessage(MessageType.PEER_QUERY, peer, _threat_body(state),
                                       trace_kind="peer-query-sent"))
        state.pending_timers.add("peer-wait")
        actions.append(StartTimer("peer-wait", policy.peer_wait))

    elif name == "peer-wait" and state.phase is Phase.AWAITING_PEERS:
        state.phase = Phase.ACTING_ALONE
        threat = state.active_threat
        assert threat is not None
        coa = decide_course_of_action(
            threat.confidence, policy,
            DecisionContext(c2_reachable=False, human_available=False,
                            target_flow=state.active_flow))
        state.chosen_coa = coa
        actions.append(TraceNote("acting-alone", {"coa": coa.kind.value,
                                                  "confidence": threat.confidence}))
        actions.append(ApplyCoa(coa, delay=policy.act_latency))

    elif name.startswith("quarantine:"):
        peer = name.split(":", 1)[1]
        actions.append(QuarantinePeer(peer))
        actions.append(InitiateOverwrite(peer))


def _on_sealed(state: BlueAgentState, event: SealedArrived,
               actions: list[AgentAction]) -> None:
    policy = state.policy
    result = verify_peer_response(state, event.sealed, event.now, event.from_node)

    if isinstance(result, InvalidSignature):
        peer = result.claimed_sender
        actions.append(TraceNote("verification-failed",
                                 {"from": peer or event.from_node, "reason": result.reason}))
        if peer is not None:
            _flag(state, peer, Evidence.INVALID_SIGNATURE, event.now, "invalid response")
            if state.phase in (Phase.POST_ACTION, Phase.ACTING_ALONE):
                timer = f"quarantine:{peer}"
                state.pending_timers.add(timer)
                actions.append(StartTimer(timer, policy.quarantine_latency))
        return

    if isinstance(result, Stale):
        peer = result.claimed_sender
        actions.append(TraceNote("verification-stale",
                                 {"from": peer or event.from_node,
                                  "age": round(result.age_seconds, 6)}))
        if peer is not None:
            _flag(state, peer, Evidence.STALE_TIMESTAMP, event.now, "stale response")
        return

    msg = result.message
    if msg.sender in state.trust:
        _flag(state, msg.sender, Evidence.VALID, event.now)

    if msg.msg_type is MessageType.PEER_QUERY:
        _on_peer_query(state, msg, actions)
    elif msg.msg_type in (MessageType.C2_RESPONSE, MessageType.PEER_RESPONSE):
        _on_response(state, msg, actions)
    elif msg.msg_type is MessageType.ACK:
        actions.append(TraceNote("ack-received", {"from": msg.sender}))
    else:
        actions.append(TraceNote("unexpected-message",
                                 {"from": msg.sender, "type": msg.msg_type.value}))


def _on_peer_query(state: BlueAgentState, msg: AgentMessage,
                   actions: list[AgentAction]) -> None:
    body = msg.body
    if body.get("kind") == "revocation":
        subject = body.get("subject", "")
        if subject in state.trust:
            _flag(state, subject, Evidence.QUARANTINED, msg.issued_at, f"revoked by {msg.sender}")
        actions.append(TraceNote("revocation-received",
                                 {"subject": subject, "from": msg.sender}))
        return
    # threat-data query: recommend from our own policy view
    confidence = float(body.get("confidence", 0.0))
    coa = decide_course_of_action(confidence, state.policy,
                                  DecisionContext(target_flow=body.get("flow")))
    actions.append(TraceNote("peer-query-received", {"from": msg.sender}))
    actions.append(SendMessage(
        MessageType.PEER_RESPONSE, msg.sender,
        {"recommendation": coa.kind.value, "target": coa.target,
         "re": body.get("digest", ""), "confidence": confidence},
        delay=state.response_latency,
        trace_kind="peer-response-sent"))


def _on_response(state: BlueAgentState, msg: AgentMessage,
                 actions: list[AgentAction]) -> None:
    policy = state.policy
    kind_name = msg.body.get("recommendation", CoaKind.LOG_ONLY.value)
    target = msg.body.get("target")
    try:
        kind = CoaKind(kind_name)
        coa = CourseOfAction(kind, target=target, rationale=f"recommended by {msg.sender}")
    except ValueError as exc:
        actions.append(TraceNote("unknown-recommendation",
                                 {"value": kind_name, "from": msg.sender,
                                  "error": str(exc)}))
        return
    # destructive actions only on c2/operator authority; a peer's say-so is
    # advisory at most and gets rejected outright
    if kind in (CoaKind.QUARANTINE, CoaKind.OVERWRITE) \
            and msg.msg_type is not MessageType.C2_RESPONSE:
        actions.append(TraceNote("recommendation-rejected",
                                 {"from": msg.sender, "coa": kind.value,
                                  "reason": "destructive action requires c2 authority"}))
        return

    if state.phase in (Phase.AWAITING_C2, Phase.AWAITING_PEERS):
        live = "c2-wait" if state.phase is Phase.AWAITING_C2 else "peer-wait"
        state.pending_timers.discard(live)
        actions.append(CancelTimer(live))
        state.phase = Phase.ACTING_ALONE
        state.chosen_coa = coa
        actions.append(TraceNote("response-applied",
                                 {"from": msg.sender, "coa": kind.value}))
        actions.append(ApplyCoa(coa, delay=policy.act_latency))
    else:
        # late but authentic: corroboration only, never re-acted upon
        applied = state.chosen_coa.kind if state.chosen_coa else CoaKind.LOG_ONLY
        actions.append(TraceNote("late-corroboration",
                                 {"from": msg.sender, "recommended": kind.value}))
        actions.append(RecordCorroboration(applied, msg.sender))


def state_digest(state: BlueAgentState) -> bytes:
    """Deterministic digest of the agent-visible state, for isolation checks."""
    import hashlib
    parts = [
        state.agent_id, state.node_id, state.phase.value,
        state.active_threat.payload_digest if state.active_threat else "-",
        repr(sorted(state.pending_timers)), repr(state.honeypot_active),
        repr(sorted((p, r.level.value) for p, r in state.trust.items())),
        state.chosen_coa.kind.value if state.chosen_coa else "-",
        state.keyring.own_signing_key.hex(),
    ]
    return hashlib.blake2b("|".join(parts).encode(), digest_size=16).digest()


def quarantine_peer(state: BlueAgentState, peer: str,
                    now: SimTime) -> tuple[bool, list[AgentAction]]:
    """Mark a flagged peer revoked. Idempotent; guards the suspected precondition."""
    record = state.trust.get(peer)
    if record is None:
        raise BlueAgentError(f"unknown peer {peer!r}")
    if record.level is TrustLevel.REVOKED:
        return False, []  # already quarantined
    if record.level is not TrustLevel.SUSPECTED_COMPROMISED:
        raise BlueAgentError(f"peer {peer!r} not flagged suspected-compromised")
    _flag(state, peer, Evidence.QUARANTINED, now, "quarantine")
    return True, [TraceNote("trust-revoked", {"peer": peer})]
