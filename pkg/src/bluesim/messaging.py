"""Sealed agent messages, fragmentation with cover traffic, address hopping.

One keyed primitive (keyed BLAKE2b) backs the authentication tags, the
keystream used for the confidentiality transform, the address-hopping PRF and
message digests. Keys are pre-shared symmetric secrets registered pairwise; a
compromised agent is one whose current signing key no longer matches what its
peers registered.

Canonical byte layout (big-endian throughout), kept bit-exact so traces and
sealed bytes compare across implementations:

  plaintext  := u8 msg_type
              | u16 len_sender   | sender utf-8
              | u16 len_recipient| recipient utf-8
              | u32 len_body     | body as JSON, sorted keys, compact
  ciphertext := u64 issued_at_micros | u64 nonce | keystream-masked plaintext
  sealed     := ciphertext | tag(16)

  tag        := BLAKE2b-128(key, ciphertext | u64 issued_at_micros)
  keystream  := BLAKE2b-512(key, "ks" | issued_at | nonce | block_index) blocks
  msg digest := BLAKE2b-128(ciphertext | tag), unkeyed
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Union

from .kernel import SeededRng, SimTime

TAG_SIZE = 16
DIGEST_SIZE = 16
CLEAR_HEADER = 16  # issued_at + nonce, authenticated but not masked

DEFAULT_FRESHNESS_WINDOW = 60.0
DEFAULT_SEGMENT_SIZE = 64
DEFAULT_MIN_SEGMENTS = 3
DEFAULT_BLEND_RATIO = 1.0


class MessagingError(Exception):
    pass


class EmptyRoutes(MessagingError):
    pass


class MessageType(str, Enum):
    C2_REQUEST = "c2-request"
    C2_RESPONSE = "c2-response"
    PEER_QUERY = "peer-query"
    PEER_RESPONSE = "peer-response"
    OVERWRITE_PACKAGE = "overwrite-package"
    ACK = "ack"


_TYPE_CODES = {m: i for i, m in enumerate(MessageType)}
_CODE_TYPES = {i: m for m, i in _TYPE_CODES.items()}


@dataclass(frozen=True)
class AgentMessage:
    msg_type: MessageType
    sender: str
    recipient: str
    issued_at: SimTime
    nonce: int
    body: dict


@dataclass(frozen=True)
class SealedMessage:
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedMessage":
        if len(raw) < CLEAR_HEADER + TAG_SIZE:
            raise MessagingError("sealed message too short")
        return cls(raw[:-TAG_SIZE], raw[-TAG_SIZE:])

    def digest(self) -> bytes:
        return hashlib.blake2b(self.ciphertext + self.tag, digest_size=DIGEST_SIZE).digest()


@dataclass(frozen=True)
class Fragment:
    msg_id: bytes
    index: int
    total: int
    payload: bytes
    route_hint: str
    cover: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.index < self.total:
            raise MessagingError(f"fragment index {self.index} outside 0..{self.total - 1}")


@dataclass
class KeyRing:
    """Per-agent key material plus the replay cache this agent owns."""

    own_id: str
    own_signing_key: bytes
    peer_verify_keys: dict[str, bytes]
    c2_seed: bytes = b""
    seen_nonces: set[tuple[str, int]] = field(default_factory=set)


@dataclass(frozen=True)
class C2Schedule:
    shared_seed: bytes
    epoch_length: float
    address_space_size: int

    def __post_init__(self) -> None:
        if self.epoch_length <= 0:
            raise MessagingError("epoch length must be positive")
        if self.address_space_size <= 0:
            raise MessagingError("address space must be positive")


@dataclass(frozen=True)
class AuthError:
    reason: str


@dataclass(frozen=True)
class StaleTimestamp:
    age_seconds: float


class Incomplete:
    def __repr__(self) -> str:
        return "Incomplete()"

    def __eq__(self, other) -> bool:
        return isinstance(other, Incomplete)

    def __hash__(self) -> int:
        return hash("Incomplete")


OpenResult = Union[AgentMessage, AuthError, StaleTimestamp]


def _mac(key: bytes, data: bytes) -> bytes:
    return hashlib.blake2b(data, key=key, digest_size=TAG_SIZE).digest()


def _keystream(key: bytes, issued_at: bytes, nonce: bytes, length: int) -> bytes:
    out = bytearray()
    block = 0
    while len(out) < length:
        out += hashlib.blake2b(b"ks" + issued_at + nonce + struct.pack(">Q", block),
                               key=key, digest_size=64).digest()
        block += 1
    return bytes(out[:length])


def _xor(data: bytes, mask: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(data, mask))


def _encode_plain(msg: AgentMessage) -> bytes:
    sender = msg.sender.encode()
    recipient = msg.recipient.encode()
    body = json.dumps(msg.body, sort_keys=True, separators=(",", ":")).encode()
    return b"".join([
        struct.pack(">B", _TYPE_CODES[msg.msg_type]),
        struct.pack(">H", len(sender)), sender,
        struct.pack(">H", len(recipient)), recipient,
        struct.pack(">I", len(body)), body,
    ])


def _decode_plain(raw: bytes, issued_at: SimTime, nonce: int) -> AgentMessage:
    off = 0
    (code,) = struct.unpack_from(">B", raw, off); off += 1
    (n,) = struct.unpack_from(">H", raw, off); off += 2
    sender = raw[off:off + n].decode(); off += n
    (n,) = struct.unpack_from(">H", raw, off); off += 2
    recipient = raw[off:off + n].decode(); off += n
    (n,) = struct.unpack_from(">I", raw, off); off += 4
    body = json.loads(raw[off:off + n].decode())
    if off + n != len(raw):
        raise MessagingError("trailing bytes in message")
    return AgentMessage(_CODE_TYPES[code], sender, recipient, issued_at, nonce, body)


def seal(msg: AgentMessage, key: bytes) -> SealedMessage:
    """Confidentiality-transform and authenticate a message. Deterministic."""
    issued = struct.pack(">Q", msg.issued_at.micros)
    nonce = struct.pack(">Q", msg.nonce)
    plain = _encode_plain(msg)
    masked = _xor(plain, _keystream(key, issued, nonce, len(plain)))
    ciphertext = issued + nonce + masked
    return SealedMessage(ciphertext, _mac(key, ciphertext + issued))


def open_sealed(sealed: SealedMessage, keyring: KeyRing, now: SimTime,
                freshness_window: float = DEFAULT_FRESHNESS_WINDOW) -> OpenResult:
    """Verify tag under a registered key, then freshness, then replay.

    The sender is identified by which registered key authenticates the tag;
    the decrypted sender field must agree with that registration.
    """
    ct = sealed.ciphertext
    if len(ct) < CLEAR_HEADER:
        return AuthError("truncated ciphertext")
    issued_raw, nonce_raw = ct[:8], ct[8:16]
    (issued_micros,) = struct.unpack(">Q", issued_raw)
    (nonce,) = struct.unpack(">Q", nonce_raw)

    for sender_id in sorted(keyring.peer_verify_keys):
        key = keyring.peer_verify_keys[sender_id]
        if _mac(key, ct + issued_raw) != sealed.tag:
            continue
        plain = _xor(ct[CLEAR_HEADER:], _keystream(key, issued_raw, nonce_raw,
                                                   len(ct) - CLEAR_HEADER))
        try:
            msg = _decode_plain(plain, SimTime(issued_micros), nonce)
        except Exception:
            return AuthError("malformed plaintext")
        if msg.sender != sender_id:
            return AuthError(f"sender field {msg.sender!r} does not match key registration")
        if msg.issued_at > now:
            return AuthError("issued in the future")
        age = now.seconds - msg.issued_at.seconds
        if age > freshness_window:
            return StaleTimestamp(age)
        if (sender_id, nonce) in keyring.seen_nonces:
            return AuthError("replayed nonce")
        keyring.seen_nonces.add((sender_id, nonce))
        return msg
    return AuthError("no registered key verifies the tag")


@dataclass(frozen=True)
class FragmentPolicy:
    segment_size: int = DEFAULT_SEGMENT_SIZE
    min_segments: int = DEFAULT_MIN_SEGMENTS
    blend_ratio: float = DEFAULT_BLEND_RATIO


def fragment(sealed: SealedMessage, policy: FragmentPolicy,
             routes: list[list[str]], rng: SeededRng) -> list[Fragment]:
    """Split sealed bytes into routed fragments, blending in cover decoys.

    Real fragments go round-robin over the routes; covers carry rng bytes
    under random msg-ids (one fragment each, so they can never reassemble) and
    are spliced in at rng-chosen positions.
    """
    if not routes:
        raise EmptyRoutes("at least one route required")
    for route in routes:
        if len(route) < 2:
            raise MessagingError(f"route {route} needs at least two hops")

    raw = sealed.to_bytes()
    by_size = math.ceil(len(raw) / policy.segment_size)
    total = max(policy.min_segments, by_size)
    chunk = policy.segment_size if by_size >= policy.min_segments else math.ceil(len(raw) / total)
    msg_id = sealed.digest()

    fragments = [
        Fragment(msg_id, i, total, raw[i * chunk:(i + 1) * chunk],
                 routes[i % len(routes)][1])
        for i in range(total)
    ]
    cover_count = math.floor(policy.blend_ratio * total)
    for _ in range(cover_count):
        claimed_total = rng.randint(2, 6)
        cover = Fragment(rng.bytes(DIGEST_SIZE), rng.randint(0, claimed_total - 1),
                         claimed_total, rng.bytes(chunk), rng.choice(routes)[1], cover=True)
        fragments.insert(rng.randint(0, len(fragments)), cover)
    return fragments


def route_for(fragments_routes: list[list[str]], frag: Fragment) -> list[str]:
    """Resolve a fragment's full path from its next-hop hint (first match)."""
    for route in fragments_routes:
        if route[1] == frag.route_hint:
            return route
    raise MessagingError(f"no route with next hop {frag.route_hint!r}")


def reassemble(fragments: Iterable[Fragment]) -> Union[SealedMessage, Incomplete]:
    """Rebuild the first msg-id (in arrival order) with a full index set.

    Cover fragments are collected like any others; their single-fragment
    random msg-ids can never complete, so they are effectively ignored.
    """
    slots: dict[bytes, dict[int, bytes]] = {}
    totals: dict[bytes, int] = {}
    order: list[bytes] = []
    for frag in fragments:
        if frag.msg_id not in slots:
            slots[frag.msg_id] = {}
            totals[frag.msg_id] = frag.total
            order.append(frag.msg_id)
        slots[frag.msg_id].setdefault(frag.index, frag.payload)
    for msg_id in order:
        total = totals[msg_id]
        got = slots[msg_id]
        if len(got) == total and all(i in got for i in range(total)):
            raw = b"".join(got[i] for i in range(total))
            if len(raw) >= CLEAR_HEADER + TAG_SIZE:
                return SealedMessage.from_bytes(raw)
    return Incomplete()


def c2_address(schedule: C2Schedule, at: SimTime) -> int:
    """Address of the c2 node for the epoch containing ``at``.

    Every holder of the shared seed computes the same value: a keyed PRF of
    the epoch index reduced into the address space.
    """
    # integer microsecond arithmetic: floor() at epoch boundaries stays exact
    epoch = at.micros // round(schedule.epoch_length * 1_000_000)
    prf = hashlib.blake2b(struct.pack(">Q", epoch), key=schedule.shared_seed,
                          digest_size=8).digest()
    return int.from_bytes(prf, "big") % schedule.address_space_size
