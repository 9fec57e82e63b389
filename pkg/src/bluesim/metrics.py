"""Run metrics and golden-timeline verification, both pure functions of a trace.

Everything here consumes the trace as a list of plain dicts (the JSONL
records), so any independent reader of a trace file can recompute the same
numbers. Definitions:

  detection latency   first detection minus start of hostile activity
  time to first action first escalation/containment event minus first detection
  false positive      destructive or isolating action applied to a flow or
                      agent with no hostile origin in the trace
  false negative      hostile presence in the trace with no detection at all
  legitimate blocked  benign transmissions suppressed by blocks or honeypots
  dwell time          compromise-to-containment gap, full run length when a
                      compromise is never contained
  mission impact      false positives plus legitimate traffic blocked
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .kernel import EventRecord

CONTAINMENT_KINDS = {"honeypot-isolated", "flow-blocked"}
DESTRUCTIVE_KINDS = {"quarantine", "overwrite-sent"}
ACTION_KINDS = {"c2-request-sent", "peer-query-sent", "acting-alone",
                "honeypot-isolated", "flow-blocked", "quarantine"}


@dataclass
class RunMetrics:
    detection_latency: Optional[float]
    time_to_first_action: Optional[float]
    false_positives: int
    false_negatives: int
    legitimate_traffic_blocked: int
    compromise_dwell_time: float
    mission_impact: float

    def to_dict(self) -> dict:
        return {
            "detection_latency": self.detection_latency,
            "time_to_first_action": self.time_to_first_action,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "legitimate_traffic_blocked": self.legitimate_traffic_blocked,
            "compromise_dwell_time": self.compromise_dwell_time,
            "mission_impact": self.mission_impact,
        }


def records_to_dicts(trace: list[EventRecord]) -> list[dict]:
    return [json.loads(record.to_jsonl()) for record in trace]


def parse_trace_jsonl(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _first(trace: list[dict], kind: str) -> Optional[dict]:
    for event in trace:
        if event["kind"] == kind:
            return event
    return None


def compute_metrics(trace: list[dict]) -> RunMetrics:
    duration = max((e["t"] for e in trace), default=0.0)

    red_flows = {e["details"].get("flow") for e in trace if e["kind"] == "red-beacon"}
    corrupted: dict[str, float] = {}
    for event in trace:
        if event["kind"] == "agent-corrupted" and event["agent"] not in corrupted:
            corrupted[event["agent"]] = event["t"]

    first_beacon = _first(trace, "red-beacon")
    first_infiltration = _first(trace, "infiltration")
    first_detection = _first(trace, "detection")

    detection_latency = None
    if first_detection is not None:
        activity_start = first_beacon["t"] if first_beacon else \
            (first_infiltration["t"] if first_infiltration else first_detection["t"])
        detection_latency = round(first_detection["t"] - activity_start, 6)

    time_to_first_action = None
    if first_detection is not None:
        for event in trace:
            if event["kind"] in ACTION_KINDS and event["t"] >= first_detection["t"]:
                time_to_first_action = round(event["t"] - first_detection["t"], 6)
                break

    false_positives = 0
    for event in trace:
        if event["kind"] in CONTAINMENT_KINDS:
            if event["details"].get("target") not in red_flows:
                false_positives += 1
        elif event["kind"] == "quarantine":
            if event["details"].get("target") not in corrupted:
                false_positives += 1
        elif event["kind"] == "overwrite-sent":
            replaces = event["details"].get("replaces")
            if replaces is not None and replaces not in corrupted:
                false_positives += 1

    hostile_present = first_infiltration is not None or bool(corrupted)
    false_negatives = 1 if hostile_present and first_detection is None else 0

    legit_blocked = sum(1 for e in trace if e["kind"] in ("benign-blocked", "benign-captured"))

    dwells: list[float] = []
    containments = [(e["t"], e["details"].get("target")) for e in trace
                    if e["kind"] in CONTAINMENT_KINDS]
    quarantines = {e["details"].get("target"): e["t"] for e in trace
                   if e["kind"] == "quarantine"}
    if first_infiltration is not None:
        red_contained = [t for t, flow in containments if flow in red_flows]
        dwells.append((min(red_contained) - first_infiltration["t"]) if red_contained
                      else duration)
    for agent, at in corrupted.items():
        dwells.append((quarantines[agent] - at) if agent in quarantines else duration)
    dwell = round(max(dwells), 6) if dwells else 0.0

    return RunMetrics(
        detection_latency=detection_latency,
        time_to_first_action=time_to_first_action,
        false_positives=false_positives,
        false_negatives=false_negatives,
        legitimate_traffic_blocked=legit_blocked,
        compromise_dwell_time=dwell,
        mission_impact=float(false_positives + legit_blocked),
    )


# --- golden timeline -----------------------------------------------------

MILESTONES: list[tuple[str, float]] = [
    ("agent-start", 0.0),
    ("infiltration", 0.100),
    ("detection", 0.200),
    ("c2-request-sent", 0.22),
    ("peer-query-sent", 3.00),
    ("peer-query-received", 5.00),
    ("acting-alone", 10.00),
    ("honeypot-isolated", 12.00),
    ("verification-failed", 23.00),
    ("quarantine", 28.00),
    ("agent-installed", 28.3),
]

TIME_TOLERANCE = 0.01


@dataclass
class VerifyResult:
    passed: bool
    failure: Optional[str] = None

    def __bool__(self) -> bool:
        return self.passed


def verify_table1(trace: list[dict]) -> VerifyResult:
    """Check presence, order and times of the 11 milestone events."""
    last_index = -1
    for row, (kind, expected) in enumerate(MILESTONES, start=1):
        index = next((i for i, e in enumerate(trace) if e["kind"] == kind), None)
        if index is None:
            return VerifyResult(False, f"row {row}: no {kind!r} event in trace")
        event = trace[index]
        if abs(event["t"] - expected) > TIME_TOLERANCE + 1e-9:
            return VerifyResult(
                False, f"row {row}: {kind!r} at t={event['t']:.6f}, expected "
                       f"{expected:.6f} (tolerance {TIME_TOLERANCE})")
        if index < last_index:
            return VerifyResult(
                False, f"row {row}: {kind!r} appears before the previous milestone")
        last_index = index
    return VerifyResult(True)


def format_event(event: dict) -> str:
    agent = event.get("agent") or "-"
    node = event.get("node") or "-"
    details = json.dumps(event.get("details", {}), sort_keys=True)
    return f"{event['t']:>12.6f}  {event['kind']:<22} {agent:<10} {node:<12} {details}"
