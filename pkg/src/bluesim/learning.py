"""Outcome memory: action-value updates, compressed lesson storage, dispersal.

Action values are kept as exact rationals so the update rule's contraction
identity |Q' - r| = (1 - alpha)|Q - r| holds exactly, not merely to float
tolerance. The lesson blob format trades a tiny header for a digest
dictionary and delta-coded timestamps; both are switched off per-blob when
they would not pay for themselves, so the compressed form never exceeds the
canonical flat serialization once a list has a non-trivial length.
"""

from __future__ import annotations

import hashlib
import struct
from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from itertools import combinations
from typing import Optional, Union

from .coa import CoaKind
from .kernel import SeededRng, SimTime

DIGEST_SIZE = 16
_CHECKSUM_SIZE = 8

_ACTION_CODES = {kind: i for i, kind in enumerate(CoaKind)}
_CODE_ACTIONS = {i: kind for kind, i in _ACTION_CODES.items()}


class LearningError(Exception):
    pass


class UnlearnableAction(LearningError):
    """Raised when an outcome names an action outside the learnable vocabulary."""


class CorruptBlob(LearningError):
    pass


class InsufficientShares(LearningError):
    pass


class RepositoryUnreachable(LearningError):
    pass


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class LessonRecord:
    threat_digest: bytes
    action: CoaKind
    outcome: Outcome
    at: SimTime

    def __post_init__(self) -> None:
        if len(self.threat_digest) != DIGEST_SIZE:
            raise LearningError(f"threat digest must be {DIGEST_SIZE} bytes")

    @property
    def reward(self) -> int:
        return 1 if self.outcome is Outcome.SUCCESS else -1


def threat_digest(matched_ids: Iterable[str], source: str) -> bytes:
    material = source + "|" + ",".join(sorted(matched_ids))
    return hashlib.blake2b(material.encode(), digest_size=DIGEST_SIZE).digest()


class ActionValueTable:
    """Exponential-recency value per (threat digest, action kind)."""

    def __init__(self, alpha: Union[Fraction, int, str] = Fraction(1, 2)) -> None:
        self.alpha = Fraction(alpha)
        if not 0 < self.alpha <= 1:
            raise LearningError(f"learning rate {self.alpha} outside (0,1]")
        self.entries: dict[tuple[bytes, CoaKind], Fraction] = {}

    def value(self, digest: bytes, action: CoaKind) -> Fraction:
        return self.entries.get((digest, action), Fraction(0))

    def best_action(self, digest: bytes) -> Optional[CoaKind]:
        candidates = [(q, kind) for (d, kind), q in self.entries.items() if d == digest]
        if not candidates:
            return None
        best_q = max(q for q, _ in candidates)
        # deterministic tie-break on the enum's declaration order
        order = list(CoaKind)
        return min((kind for q, kind in candidates if q == best_q), key=order.index)


def record_outcome(table: ActionValueTable, record: LessonRecord) -> ActionValueTable:
    """Q <- Q + alpha * (reward - Q); missing entries start at 0."""
    if not isinstance(record.action, CoaKind):
        raise UnlearnableAction(f"{record.action!r} is not a learnable course of action")
    key = (record.threat_digest, record.action)
    q = table.entries.get(key, Fraction(0))
    updated = q + table.alpha * (record.reward - q)
    assert -1 <= updated <= 1, "action value escaped [-1, 1]"
    table.entries[key] = updated
    return table


# --- lesson blob encoding -------------------------------------------------

_FLAG_DIGEST_DICT = 0x01
_FLAG_DELTA_TIMES = 0x02


def _write_varint(value: int, out: bytearray) -> None:
    if value < 0:
        raise LearningError("varint value must be non-negative")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(raw: bytes, off: int) -> tuple[int, int]:
    value = 0
    shift = 0
    while True:
        if off >= len(raw):
            raise CorruptBlob("truncated varint")
        byte = raw[off]
        off += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, off
        shift += 7
        if shift > 70:
            raise CorruptBlob("varint too long")


def _zigzag(value: int) -> int:
    return (value << 1) ^ (value >> 63) if value >= 0 else ((-value) << 1) - 1


def _unzigzag(value: int) -> int:
    return (value >> 1) if not value & 1 else -((value + 1) >> 1)


def _varint_len(value: int) -> int:
    length = 1
    while value > 0x7F:
        value >>= 7
        length += 1
    return length


def canonical_serialize(records: list[LessonRecord]) -> bytes:
    """Flat reference encoding: count, then digest|action|outcome|timestamp each."""
    out = bytearray()
    _write_varint(len(records), out)
    for rec in records:
        out += rec.threat_digest
        out.append(_ACTION_CODES[rec.action])
        out.append(1 if rec.outcome is Outcome.SUCCESS else 0)
        out += struct.pack(">Q", rec.at.micros)
    return bytes(out)


def compress(records: list[LessonRecord]) -> bytes:
    digests = [rec.threat_digest for rec in records]
    unique = list(dict.fromkeys(digests))
    indices = {d: i for i, d in enumerate(unique)}

    dict_cost = (_varint_len(len(unique)) + DIGEST_SIZE * len(unique)
                 + sum(_varint_len(indices[d]) for d in digests))
    inline_cost = DIGEST_SIZE * len(records)
    use_dict = dict_cost < inline_cost

    deltas = []
    prev = 0
    for rec in records:
        deltas.append(_zigzag(rec.at.micros - prev))
        prev = rec.at.micros
    delta_cost = sum(_varint_len(d) for d in deltas)
    use_delta = delta_cost < 8 * len(records)

    out = bytearray()
    _write_varint(len(records), out)
    out.append((_FLAG_DIGEST_DICT if use_dict else 0) | (_FLAG_DELTA_TIMES if use_delta else 0))
    if use_dict:
        _write_varint(len(unique), out)
        for d in unique:
            out += d
    for rec, delta in zip(records, deltas):
        if use_dict:
            _write_varint(indices[rec.threat_digest], out)
        else:
            out += rec.threat_digest
        out.append(_ACTION_CODES[rec.action] | (0x80 if rec.outcome is Outcome.SUCCESS else 0))
        if use_delta:
            _write_varint(delta, out)
        else:
            out += struct.pack(">Q", rec.at.micros)
    out += hashlib.blake2b(bytes(out), digest_size=_CHECKSUM_SIZE).digest()
    return bytes(out)


def decompress(blob: bytes) -> list[LessonRecord]:
    if len(blob) < _CHECKSUM_SIZE + 2:
        raise CorruptBlob("blob too short")
    body, checksum = blob[:-_CHECKSUM_SIZE], blob[-_CHECKSUM_SIZE:]
    if hashlib.blake2b(body, digest_size=_CHECKSUM_SIZE).digest() != checksum:
        raise CorruptBlob("checksum mismatch")
    try:
        count, off = _read_varint(body, 0)
        flags = body[off]
        off += 1
        unique: list[bytes] = []
        if flags & _FLAG_DIGEST_DICT:
            n_unique, off = _read_varint(body, off)
            for _ in range(n_unique):
                unique.append(body[off:off + DIGEST_SIZE])
                off += DIGEST_SIZE
        records = []
        prev = 0
        for _ in range(count):
            if flags & _FLAG_DIGEST_DICT:
                idx, off = _read_varint(body, off)
                digest = unique[idx]
            else:
                digest = body[off:off + DIGEST_SIZE]
                off += DIGEST_SIZE
            if len(digest) != DIGEST_SIZE:
                raise CorruptBlob("truncated digest")
            packed = body[off]
            off += 1
            action = _CODE_ACTIONS[packed & 0x7F]
            outcome = Outcome.SUCCESS if packed & 0x80 else Outcome.FAILURE
            if flags & _FLAG_DELTA_TIMES:
                zz, off = _read_varint(body, off)
                micros = prev + _unzigzag(zz)
            else:
                (micros,) = struct.unpack_from(">Q", body, off)
                off += 8
            prev = micros
            records.append(LessonRecord(digest, action, outcome, SimTime(micros)))
        if off != len(body):
            raise CorruptBlob("trailing bytes")
        return records
    except CorruptBlob:
        raise
    except Exception as exc:
        raise CorruptBlob(f"malformed blob: {exc}") from None


# --- central repository sync ----------------------------------------------


@dataclass
class StoredLesson:
    origin: str
    record: LessonRecord
    synced: bool = False


class LessonStore:
    """Per-agent lesson memory; broadcast lessons keep their origin agent id."""

    def __init__(self, agent_id: str) -> None:
        self.agent_id = agent_id
        self.lessons: list[StoredLesson] = []

    def add(self, record: LessonRecord, origin: Optional[str] = None) -> StoredLesson:
        stored = StoredLesson(origin or self.agent_id, record)
        self.lessons.append(stored)
        return stored

    def unsynced(self) -> list[StoredLesson]:
        return [l for l in self.lessons if not l.synced]


class Repository:
    def __init__(self) -> None:
        self.reachable = True
        self.entries: dict[tuple[str, int, bytes], LessonRecord] = {}

    def dump(self) -> list[dict]:
        rows = []
        for (origin, micros, digest), rec in sorted(self.entries.items()):
            rows.append({
                "origin": origin,
                "at": SimTime(micros).format(),
                "digest": digest.hex(),
                "action": rec.action.value,
                "outcome": rec.outcome.value,
            })
        return rows


def sync_to_repository(store: LessonStore, repository: Repository,
                       contested: bool) -> int:
    """Upload unsynced lessons over an uncontested link; dedup at the repository."""
    if contested:
        return 0
    if not repository.reachable:
        raise RepositoryUnreachable("central repository not reachable, retry later")
    uploaded = 0
    for stored in store.unsynced():
        key = (stored.origin, stored.record.at.micros, stored.record.threat_digest)
        repository.entries.setdefault(key, stored.record)
        stored.synced = True
        uploaded += 1
    return uploaded


# --- threshold dispersal ----------------------------------------------------


@dataclass(frozen=True)
class DispersalShare:
    group_id: bytes
    index: int
    share_bytes: bytes
    k_required: int
    n_total: int


def disperse(data: bytes, k: int, n: int, rng: SeededRng) -> list[DispersalShare]:
    """Split data into n shares so any k recover it and any k-1 reveal nothing.

    One XOR chain per k-subset of share indices: k-1 fresh uniform masks plus
    the masked data. Every proper sub-threshold view sees only chains missing
    at least one member, i.e. independent uniform bytes.
    """
    if not 1 <= k <= n:
        raise LearningError(f"need 1 <= k <= n, got k={k} n={n}")
    group_id = rng.bytes(8)
    subsets = list(combinations(range(n), k))
    pieces: dict[tuple[int, ...], dict[int, bytes]] = {}
    for subset in subsets:
        chain: dict[int, bytes] = {}
        acc = bytes(len(data))
        for member in subset[:-1]:
            mask = rng.bytes(len(data))
            chain[member] = mask
            acc = bytes(a ^ b for a, b in zip(acc, mask))
        chain[subset[-1]] = bytes(a ^ b for a, b in zip(acc, data))
        pieces[subset] = chain
    shares = []
    for index in range(n):
        blob = b"".join(pieces[s][index] for s in subsets if index in s)
        shares.append(DispersalShare(group_id, index, blob, k, n))
    return shares


def recover(shares: Iterable[DispersalShare]) -> bytes:
    """Rebuild the dispersed data from any k distinct shares of one group."""
    supplied = list(shares)
    if not supplied:
        raise InsufficientShares("no shares supplied")
    first = supplied[0]
    if any(s.group_id != first.group_id or s.k_required != first.k_required
           or s.n_total != first.n_total for s in supplied):
        raise LearningError("shares belong to different dispersal groups")
    pool = {share.index: share for share in supplied}
    k, n = first.k_required, first.n_total
    if len(pool) < k:
        raise InsufficientShares(f"{len(pool)} distinct shares, {k} required")
    subset = tuple(sorted(pool)[:k])
    subsets = list(combinations(range(n), k))
    data = None
    for index in subset:
        containing = [s for s in subsets if index in s]
        piece_len = len(pool[index].share_bytes) // len(containing)
        pos = containing.index(subset)
        piece = pool[index].share_bytes[pos * piece_len:(pos + 1) * piece_len]
        data = piece if data is None else bytes(a ^ b for a, b in zip(data, piece))
    return data if data is not None else b""
