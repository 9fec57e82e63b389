"""Course-of-action vocabulary shared by agents, c2 and the learning store."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional


class CoaKind(str, Enum):
    # Contacting c2 is deliberately not part of this vocabulary: escalation up
    # the chain of command is unconditional and must never become a learned
    # (and therefore suppressible) preference.
    LOG_ONLY = "log-only"
    DEFER = "defer"
    HONEYPOT_ISOLATE = "honeypot-isolate"
    BLOCK = "block"
    QUARANTINE = "quarantine"
    OVERWRITE = "overwrite"


DESTRUCTIVE_KINDS = frozenset({CoaKind.QUARANTINE, CoaKind.OVERWRITE})
ISOLATING_KINDS = frozenset({CoaKind.HONEYPOT_ISOLATE, CoaKind.BLOCK})

_AGENT_TARGETED = frozenset({CoaKind.QUARANTINE, CoaKind.OVERWRITE})
_FLOW_TARGETED = frozenset({CoaKind.BLOCK, CoaKind.HONEYPOT_ISOLATE})


@dataclass(frozen=True)
class CourseOfAction:
    kind: CoaKind
    target: Optional[str] = None  # agent id, or flow "src->dst"
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.kind in _AGENT_TARGETED:
            if not self.target or "->" in self.target:
                raise ValueError(f"{self.kind.value} must target an agent id")
        elif self.kind in _FLOW_TARGETED:
            if not self.target or "->" not in self.target:
                raise ValueError(f"{self.kind.value} must target a traffic flow src->dst")
