"""Command-and-control node: agent registry, remediation answers, deferrals.

Requests from fully autonomous agents get an immediate recommendation, taken
from c2's own action-value memory when it has one for the threat and from the
default decision bands otherwise. Semiautonomous requests enqueue a deferral
for the human operator; every deferral ends in exactly one of approved,
denied or expired.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .blue import AutonomyMode, AutonomyPolicy, DecisionContext, decide_course_of_action
from .coa import CoaKind, CourseOfAction
from .kernel import SimTime
from .learning import ActionValueTable
from .messaging import AgentMessage, C2Schedule


class C2Error(Exception):
    pass


class UnknownDeferral(C2Error):
    pass


class AlreadyResolved(C2Error):
    pass


class DeferralStatus(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"
    EXPIRED = "expired"


class Decision(str, Enum):
    APPROVE = "approve"
    DENY = "deny"


@dataclass
class Deferral:
    deferral_id: int
    requester: str
    subject: str
    confidence: float
    threat_digest: str
    proposed: CourseOfAction
    enqueued_at: SimTime
    deadline: SimTime
    status: DeferralStatus = DeferralStatus.PENDING
    rationale: str = ""

    def view(self) -> dict:
        return {
            "deferral_id": self.deferral_id,
            "requester": self.requester,
            "subject": self.subject,
            "confidence": self.confidence,
            "proposed": self.proposed.kind.value,
            "proposed_target": self.proposed.target,
            "enqueued_at": self.enqueued_at.format(),
            "deadline": self.deadline.format(),
            "status": self.status.value,
            "rationale": self.rationale,
        }


@dataclass
class RegistryEntry:
    node: str
    last_contact: SimTime
    trust: str = "trusted"


@dataclass
class C2State:
    c2_id: str
    node_id: str
    schedule: C2Schedule
    table: ActionValueTable = field(default_factory=ActionValueTable)
    registry: dict[str, RegistryEntry] = field(default_factory=dict)
    deferral_queue: list[Deferral] = field(default_factory=list)
    deferral_deadline: float = 30.0
    _next_deferral: int = 1

    def pending(self) -> list[Deferral]:
        return [d for d in self.deferral_queue if d.status is DeferralStatus.PENDING]

    def find(self, deferral_id: int) -> Deferral:
        for d in self.deferral_queue:
            if d.deferral_id == deferral_id:
                return d
        raise UnknownDeferral(f"no deferral {deferral_id}")


@dataclass(frozen=True)
class Respond:
    coa: CourseOfAction


@dataclass(frozen=True)
class Enqueued:
    deferral: Deferral


def _recommend(state: C2State, digest_hex: str, confidence: float,
               flow: Optional[str], defaults: AutonomyPolicy) -> CourseOfAction:
    """Concrete recommendation: learned preference first, decision bands otherwise.

    Only actions the requester can execute against its reported flow are
    recommendable from memory; agent-targeted kinds fall back to the bands
    because c2 cannot name the victim from a threat digest alone.
    """
    try:
        digest = bytes.fromhex(digest_hex)
    except ValueError:
        digest = b""
    learned = state.table.best_action(digest) if len(digest) == 16 else None
    if learned is not None and state.table.value(digest, learned) > 0:
        if learned in (CoaKind.BLOCK, CoaKind.HONEYPOT_ISOLATE):
            return CourseOfAction(learned, target=flow or "unknown->unknown",
                                  rationale="learned preference")
        if learned is CoaKind.LOG_ONLY:
            return CourseOfAction(learned, rationale="learned preference")
    bands = AutonomyPolicy(mode=AutonomyMode.FULL,
                           defer_threshold=defaults.defer_threshold,
                           act_threshold=defaults.act_threshold)
    return decide_course_of_action(confidence, bands,
                                   DecisionContext(c2_reachable=True, target_flow=flow))


def handle_c2_request(state: C2State, msg: AgentMessage, requester_node: str,
                      now: SimTime,
                      defaults: Optional[AutonomyPolicy] = None) -> Union[Respond, Enqueued]:
    """Answer a verified remediation request or park it for the operator."""
    defaults = defaults or AutonomyPolicy()
    state.registry.setdefault(msg.sender, RegistryEntry(requester_node, now))
    state.registry[msg.sender].last_contact = now

    body = msg.body
    confidence = float(body.get("confidence", 0.0))
    flow = body.get("flow")
    digest_hex = body.get("digest", "")
    proposed = _recommend(state, digest_hex, confidence, flow, defaults)

    if body.get("mode") == AutonomyMode.SEMI.value:
        deferral = Deferral(
            deferral_id=state._next_deferral,
            requester=msg.sender,
            subject=body.get("subject", requester_node),
            confidence=confidence,
            threat_digest=digest_hex,
            proposed=proposed,
            enqueued_at=now,
            deadline=now.plus_seconds(state.deferral_deadline),
        )
        state._next_deferral += 1
        state.deferral_queue.append(deferral)
        return Enqueued(deferral)
    return Respond(proposed)


def resolve_deferral(state: C2State, deferral_id: int, decision: Decision,
                     rationale: str = "") -> tuple[Deferral, CourseOfAction]:
    """Terminal operator decision; the returned CoA goes back to the requester."""
    deferral = state.find(deferral_id)
    if deferral.status is not DeferralStatus.PENDING:
        raise AlreadyResolved(f"deferral {deferral_id} already {deferral.status.value}")
    deferral.rationale = rationale
    if decision is Decision.APPROVE:
        deferral.status = DeferralStatus.APPROVED
        return deferral, deferral.proposed
    deferral.status = DeferralStatus.DENIED
    return deferral, CourseOfAction(CoaKind.LOG_ONLY, rationale=f"denied: {rationale}")


def expire_deferral(state: C2State, deferral_id: int) -> tuple[Deferral, CourseOfAction]:
    """Deadline passed with no decision: authorize the agent's fallback action."""
    deferral = state.find(deferral_id)
    if deferral.status is not DeferralStatus.PENDING:
        raise AlreadyResolved(f"deferral {deferral_id} already {deferral.status.value}")
    deferral.status = DeferralStatus.EXPIRED
    deferral.rationale = "deadline expired with no operator decision"
    return deferral, deferral.proposed
