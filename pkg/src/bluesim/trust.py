"""Trust lifecycle, quorum-gated transfer, boundary rules, comply-to-connect.

Trust only moves downward (trusted -> suspected -> revoked); the sole way
back to trusted is a re-imaged agent under a fresh identity. Transfer of an
agent image is gated in a fixed order -- quorum, boundary, container
authentication -- so a denial always names the first failed check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

from .kernel import Node, SimTime
from .messaging import AgentMessage, AuthError, KeyRing, MessageType, SealedMessage, open_sealed


class TrustError(Exception):
    pass


class PeerUnknown(TrustError):
    pass


class TrustLevel(str, Enum):
    TRUSTED = "trusted"
    SUSPECTED_COMPROMISED = "suspected-compromised"
    REVOKED = "revoked"


_RANK = {TrustLevel.TRUSTED: 0, TrustLevel.SUSPECTED_COMPROMISED: 1, TrustLevel.REVOKED: 2}


class Evidence(str, Enum):
    VALID = "valid"
    INVALID_SIGNATURE = "invalid-signature"
    STALE_TIMESTAMP = "stale-timestamp"
    INSTRUCTED_SUSPECT = "instructed-suspect"  # authenticated c2/operator order
    QUARANTINED = "quarantined"


@dataclass(frozen=True)
class TrustRecord:
    subject: str
    level: TrustLevel = TrustLevel.TRUSTED
    last_verified: SimTime = SimTime(0)
    evidence: tuple[str, ...] = ()


def evaluate_trust(record: TrustRecord, evidence: Evidence, at: SimTime,
                   ref: str = "") -> TrustRecord:
    """Apply one verification outcome. Level never rises here.

    Valid traffic refreshes last-verified without upgrading the level; a
    stale-but-authentic message is noted at lower severity (evidence only).
    """
    entry = f"{at.format()}:{evidence.value}" + (f":{ref}" if ref else "")
    trail = record.evidence + (entry,)
    if evidence in (Evidence.INVALID_SIGNATURE, Evidence.INSTRUCTED_SUSPECT):
        level = max(record.level, TrustLevel.SUSPECTED_COMPROMISED, key=_RANK.get)
    elif evidence is Evidence.QUARANTINED:
        level = TrustLevel.REVOKED
    else:
        level = record.level
    last = at if evidence is Evidence.VALID else record.last_verified
    return replace(record, level=level, last_verified=last, evidence=trail)


@dataclass(frozen=True)
class BoundarySpec:
    authorized_nodes: frozenset[str]

    def __post_init__(self) -> None:
        if not self.authorized_nodes:
            raise TrustError("boundary spec must authorize at least one node")


@dataclass(frozen=True)
class TransferPolicy:
    quorum: int = 0
    eligible_approvers: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.quorum < 0:
            raise TrustError("quorum cannot be negative")
        if self.quorum > len(self.eligible_approvers):
            raise TrustError("quorum exceeds the number of eligible approvers")


class BoundaryVerdict(str, Enum):
    IN_BOUNDS = "in-bounds"
    OUT_OF_BOUNDS = "out-of-bounds"


def check_boundary(node_id: str, boundary: BoundarySpec) -> BoundaryVerdict:
    if node_id in boundary.authorized_nodes:
        return BoundaryVerdict.IN_BOUNDS
    return BoundaryVerdict.OUT_OF_BOUNDS


@dataclass(frozen=True)
class Allow:
    message: AgentMessage


@dataclass(frozen=True)
class Deny:
    reason: str  # "quorum" | "boundary" | "container-auth"
    detail: str = ""


def authorize_transfer(package: SealedMessage, target: Node, approvals: set[str],
                       policy: TransferPolicy, boundary: BoundarySpec,
                       container_keyring: KeyRing, now: SimTime) -> Union[Allow, Deny]:
    """Gate an agent-image transfer; Deny names the first failed check.

    Container authentication opens the sealed package under the target
    container's registered keys, so the replay cache is only consumed when
    quorum and boundary already passed.
    """
    valid_approvals = approvals & policy.eligible_approvers
    if len(valid_approvals) < policy.quorum:
        return Deny("quorum", f"{len(valid_approvals)} of {policy.quorum} approvals")
    if check_boundary(target.id, boundary) is BoundaryVerdict.OUT_OF_BOUNDS:
        return Deny("boundary", f"{target.id} not an authorized node")
    opened = open_sealed(package, container_keyring, now)
    if not isinstance(opened, AgentMessage) or opened.msg_type is not MessageType.OVERWRITE_PACKAGE:
        detail = opened.reason if isinstance(opened, AuthError) else "stale or wrong message type"
        return Deny("container-auth", detail)
    return Allow(opened)


@dataclass(frozen=True)
class Admitted:
    pass


@dataclass(frozen=True)
class Rejected:
    failed_predicate: str


def comply_to_connect(candidate_facts: dict[str, bool],
                      required: list[str]) -> Union[Admitted, Rejected]:
    """Admission check for a joining device: every required predicate must hold."""
    for predicate in required:
        if not candidate_facts.get(predicate, False):
            return Rejected(predicate)
    return Admitted()
