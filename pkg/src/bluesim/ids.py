"""Lightweight detection: k-gram hash index over byte signatures + log rules.

Payload scanning hashes every k-gram of the configured patterns into an
index (64-bit rolling hash), locates candidate positions in a payload, and
confirms each candidate by direct byte comparison, so hash collisions can
cost time but never misattribute a pattern. Log scanning is a sliding-window
threshold count per rule. Both evidence kinds fuse into one confidence score
under a noisy-OR combination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .kernel import SimTime

log = logging.getLogger(__name__)

DEFAULT_GRAM_SIZE = 8

_HASH_BASE = 1000003
_HASH_MASK = (1 << 64) - 1


class IdsError(Exception):
    pass


class PatternTooShort(IdsError):
    pass


class UnsortedLog(IdsError):
    pass


class LogEventKind(str, Enum):
    PRIVILEGE_ESCALATION = "privilege-escalation"
    ABNORMAL_CRASH = "abnormal-crash"
    FAILED_LOGIN = "failed-login"
    OTHER = "other"


@dataclass(frozen=True)
class SignaturePattern:
    pattern_id: str
    data: bytes
    weight: float


@dataclass(frozen=True)
class LogRule:
    rule_id: str
    kind: LogEventKind
    threshold_count: int
    window: float
    weight: float

    def __post_init__(self) -> None:
        if self.threshold_count < 1:
            raise IdsError("threshold count must be >= 1")
        if self.window <= 0:
            raise IdsError("window must be positive")


@dataclass(frozen=True)
class LogEvent:
    at: SimTime
    kind: LogEventKind


@dataclass(frozen=True)
class DetectionEvent:
    source: str  # "network" | "log"
    matched_ids: tuple[str, ...]
    confidence: float
    observed_at: SimTime
    subject: str
    payload_digest: str


class SignatureDb:
    def __init__(self, patterns: dict[str, SignaturePattern], gram_size: int,
                 gram_index: dict[int, list[tuple[str, int]]]) -> None:
        self.patterns = patterns
        self.gram_size = gram_size
        self.gram_index = gram_index

    def gram_count(self, pattern_id: str) -> int:
        return len(self.patterns[pattern_id].data) - self.gram_size + 1


def _rolling_hashes(data: bytes, k: int):
    """Yield (offset, 64-bit hash) for every k-gram of data."""
    if len(data) < k:
        return
    h = 0
    for b in data[:k]:
        h = (h * _HASH_BASE + b) & _HASH_MASK
    yield 0, h
    drop = pow(_HASH_BASE, k - 1, 1 << 64)
    for i in range(1, len(data) - k + 1):
        h = ((h - data[i - 1] * drop) * _HASH_BASE + data[i + k - 1]) & _HASH_MASK
        yield i, h


def compile_signatures(patterns: Iterable[tuple[str, bytes, float]],
                       k: int = DEFAULT_GRAM_SIZE) -> SignatureDb:
    """Index every k-gram of every pattern. Deterministic; dedups identical bytes."""
    if k < 2:
        raise IdsError(f"gram size {k} must be >= 2")
    compiled: dict[str, SignaturePattern] = {}
    seen_bytes: dict[bytes, str] = {}
    index: dict[int, list[tuple[str, int]]] = {}
    for pattern_id, data, weight in patterns:
        if len(data) < k:
            raise PatternTooShort(f"pattern {pattern_id!r} shorter than gram size {k}")
        if not 0.0 < weight <= 1.0:
            raise IdsError(f"pattern {pattern_id!r} weight {weight} outside (0,1]")
        if pattern_id in compiled:
            raise IdsError(f"duplicate pattern id {pattern_id!r}")
        if data in seen_bytes:
            log.warning("pattern %r duplicates %r, keeping the first",
                        pattern_id, seen_bytes[data])
            continue
        seen_bytes[data] = pattern_id
        compiled[pattern_id] = SignaturePattern(pattern_id, data, weight)
        for off, h in _rolling_hashes(data, k):
            index.setdefault(h, []).append((pattern_id, off))
    return SignatureDb(compiled, k, index)


def scan_payload(db: SignatureDb, payload: bytes) -> list[tuple[str, float]]:
    """Match fractions per pattern: best contiguous in-order gram run.

    For each pattern, candidate gram hits are grouped by alignment
    (payload offset minus pattern offset); the largest distinct-gram count at
    a single alignment over the pattern's total gram count is the fraction.
    1.0 exactly when the full pattern occurs as a substring.
    """
    if not db.patterns or len(payload) < db.gram_size:
        return []
    k = db.gram_size
    hits: dict[tuple[str, int], set[int]] = {}
    for pos, h in _rolling_hashes(payload, k):
        for pattern_id, off in db.gram_index.get(h, ()):
            if payload[pos:pos + k] == db.patterns[pattern_id].data[off:off + k]:
                hits.setdefault((pattern_id, pos - off), set()).add(off)
    best: dict[str, int] = {}
    for (pattern_id, _), offsets in hits.items():
        if len(offsets) > best.get(pattern_id, 0):
            best[pattern_id] = len(offsets)
    return sorted((pid, count / db.gram_count(pid)) for pid, count in best.items())


def scan_log(rules: Sequence[LogRule], events: Sequence[LogEvent],
             now: SimTime) -> list[tuple[str, bool, int]]:
    """Fire each rule whose event count within (now - window, now] meets its threshold."""
    for earlier, later in zip(events, events[1:]):
        if later.at < earlier.at:
            raise UnsortedLog("log events not time-ordered")
    results = []
    for rule in rules:
        window_start = now.seconds - rule.window
        count = sum(1 for ev in events
                    if ev.kind is rule.kind and window_start < ev.at.seconds <= now.seconds)
        results.append((rule.rule_id, count >= rule.threshold_count, count))
    return results


def fuse_confidence(items: Iterable[tuple[float, float]]) -> float:
    """Noisy-OR of (weight, strength) evidence items; empty evidence is 0.

    Rounded to 12 decimals so single-factor results come back as the exact
    configured weight and threshold comparisons stay stable.
    """
    remainder = 1.0
    for weight, strength in items:
        remainder *= 1.0 - weight * strength
    return round(1.0 - remainder, 12)
