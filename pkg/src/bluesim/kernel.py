"""Deterministic discrete-event kernel: simulated clock, topology, lossy links.

Everything in the simulation happens through this kernel. Time is kept as a
fixed-point count of microseconds so that traces compare exactly across
platforms; ties at equal time dispatch in insertion order. Randomness is only
available through named sub-streams derived from the run seed, so adding a
consumer never perturbs the draws of another.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

MICROS_PER_SECOND = 1_000_000


class SimError(Exception):
    """Base class for kernel errors."""


class SchedulingInPast(SimError):
    pass


class NoSuchLink(SimError):
    pass


class TopologyError(SimError):
    pass


@dataclass(frozen=True, order=True)
class SimTime:
    """Simulated instant, stored as non-negative integer microseconds."""

    micros: int

    def __post_init__(self) -> None:
        if self.micros < 0:
            raise ValueError("simulated time cannot be negative")

    @classmethod
    def from_seconds(cls, seconds: float) -> "SimTime":
        return cls(round(seconds * MICROS_PER_SECOND))

    @property
    def seconds(self) -> float:
        return self.micros / MICROS_PER_SECOND

    def plus_seconds(self, seconds: float) -> "SimTime":
        return SimTime(self.micros + round(seconds * MICROS_PER_SECOND))

    def format(self) -> str:
        """Decimal seconds with exactly six fractional digits."""
        return f"{self.micros // MICROS_PER_SECOND}.{self.micros % MICROS_PER_SECOND:06d}"

    def __repr__(self) -> str:
        return f"SimTime({self.format()})"


T0 = SimTime(0)


class NodeKind(str, Enum):
    DEVICE = "device"
    C2 = "c2"
    EXTERNAL_SITE = "external-site"


@dataclass
class Node:
    id: str
    kind: NodeKind = NodeKind.DEVICE
    isolation: bool = False
    in_bounds: bool = True
    installed_agents: set[str] = field(default_factory=set)


@dataclass
class Link:
    """Directed link. Contested windows override the loss probability."""

    src: str
    dst: str
    base_delay: float = 0.0
    loss_probability: float = 0.0
    contested_windows: list[tuple[SimTime, SimTime]] = field(default_factory=list)
    contested_loss: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_probability <= 1.0:
            raise TopologyError(f"loss probability {self.loss_probability} outside [0,1]")
        for start, end in self.contested_windows:
            if not start < end:
                raise TopologyError(f"contested window on {self.src}->{self.dst} has start >= end")

    def loss_at(self, at: SimTime) -> float:
        for start, end in self.contested_windows:
            if start <= at < end:
                return self.contested_loss
        return self.loss_probability


class Topology:
    def __init__(self) -> None:
        self.nodes: dict[str, Node] = {}
        self.links: dict[tuple[str, str], Link] = {}

    def add_node(self, node: Node) -> Node:
        if node.id in self.nodes:
            raise TopologyError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        return node

    def add_link(self, link: Link) -> Link:
        for end in (link.src, link.dst):
            if end not in self.nodes:
                raise TopologyError(f"link references unknown node {end!r}")
        self.links[(link.src, link.dst)] = link
        return link

    def link(self, src: str, dst: str) -> Link:
        try:
            return self.links[(src, dst)]
        except KeyError:
            raise NoSuchLink(f"no link {src} -> {dst}") from None

    def neighbors(self, node_id: str) -> list[str]:
        return sorted({dst for (src, dst) in self.links if src == node_id})

    def validate(self) -> None:
        c2_count = sum(1 for n in self.nodes.values() if n.kind is NodeKind.C2)
        if c2_count > 1:
            raise TopologyError(f"{c2_count} c2 nodes in topology, at most one allowed")


def derive_stream_seed(seed: int, stream: str) -> int:
    material = f"{seed}:{stream}".encode()
    return int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "big")


class SeededRng:
    """Named random sub-stream: (seed, stream, draw index) fully determines values."""

    def __init__(self, seed: int, stream: str) -> None:
        self.seed = seed
        self.stream = stream
        self._rng = random.Random(derive_stream_seed(seed, stream))

    def random(self) -> float:
        return self._rng.random()

    def randint(self, lo: int, hi: int) -> int:
        return self._rng.randint(lo, hi)

    def bytes(self, n: int) -> bytes:
        return self._rng.getrandbits(8 * n).to_bytes(n, "big") if n else b""

    def choice(self, seq):
        return seq[self._rng.randrange(len(seq))]


@dataclass
class EventRecord:
    t: SimTime
    seq: int
    node: Optional[str]
    agent: Optional[str]
    kind: str
    details: dict

    def to_jsonl(self) -> str:
        # t emitted as a bare JSON number with six fractional digits; the rest
        # serialized with sorted keys so traces are byte-stable.
        tail = json.dumps(
            {"seq": self.seq, "node": self.node, "agent": self.agent,
             "kind": self.kind, "details": self.details},
            sort_keys=True, separators=(",", ":"))
        return '{"t":' + self.t.format() + "," + tail[1:]


@dataclass
class EventHandle:
    t: SimTime
    seq: int
    cancelled: bool = False


@dataclass
class Delivered:
    at: SimTime


class Dropped:
    def __repr__(self) -> str:
        return "Dropped()"

    def __eq__(self, other) -> bool:
        return isinstance(other, Dropped)

    def __hash__(self) -> int:
        return hash("Dropped")


@dataclass
class _Pending:
    node: Optional[str]
    agent: Optional[str]
    kind: str
    details: dict
    action: Optional[Callable[[EventRecord], None]]


class Simulator:
    """Single-threaded event loop. Sole owner of all simulation state.

    ``schedule`` enqueues an event; ``run_until`` dispatches in (t, seq)
    order, appending every dispatched event to the trace and invoking its
    action callback, which may schedule further events.
    """

    def __init__(self, topology: Topology, seed: int) -> None:
        topology.validate()
        self.topology = topology
        self.seed = seed
        self.now = T0
        self.trace: list[EventRecord] = []
        self._heap: list[tuple[int, int]] = []
        self._pending: dict[int, tuple[EventHandle, _Pending]] = {}
        self._seq = 0
        self._streams: dict[str, SeededRng] = {}
        self._post_dispatch: list[Callable[[EventRecord], None]] = []
        self._trace_listeners: list[Callable[[EventRecord], None]] = []

    def stream(self, label: str) -> SeededRng:
        if label not in self._streams:
            self._streams[label] = SeededRng(self.seed, label)
        return self._streams[label]

    def add_post_dispatch_check(self, check: Callable[[EventRecord], None]) -> None:
        self._post_dispatch.append(check)

    def add_trace_listener(self, listener: Callable[[EventRecord], None]) -> None:
        self._trace_listeners.append(listener)

    def schedule(self, at: SimTime, kind: str, *, node: Optional[str] = None,
                 agent: Optional[str] = None, details: Optional[dict] = None,
                 action: Optional[Callable[[EventRecord], None]] = None) -> EventHandle:
        if at < self.now:
            raise SchedulingInPast(f"cannot schedule at {at.format()}, now is {self.now.format()}")
        handle = EventHandle(at, self._seq)
        self._pending[self._seq] = (handle, _Pending(node, agent, kind, details or {}, action))
        heapq.heappush(self._heap, (at.micros, self._seq))
        self._seq += 1
        return handle

    def cancel(self, handle: EventHandle) -> None:
        handle.cancelled = True
        self._pending.pop(handle.seq, None)

    def emit(self, kind: str, *, node: Optional[str] = None, agent: Optional[str] = None,
             details: Optional[dict] = None,
             action: Optional[Callable[[EventRecord], None]] = None) -> EventHandle:
        """Trace an event at the current instant.

        Sugar for scheduling at ``now``: the record still flows through the
        queue so the trace stays sorted on (t, seq) even when other same-time
        events are pending.
        """
        return self.schedule(self.now, kind, node=node, agent=agent,
                             details=details, action=action)

    def _append(self, record: EventRecord) -> None:
        self.trace.append(record)
        for listener in self._trace_listeners:
            listener(record)

    def transmit(self, size: int, src: str, dst: str, at: Optional[SimTime] = None):
        """Decide one hop's fate. Consumes exactly one draw from the link's stream.

        Returns Delivered(arrival) or Dropped(); the caller schedules the
        arrival event.
        """
        link = self.topology.link(src, dst)
        send_time = at if at is not None else self.now
        loss = link.loss_at(send_time)
        draw = self.stream(f"loss:{src}->{dst}").random()
        if draw < loss:
            return Dropped()
        return Delivered(send_time.plus_seconds(link.base_delay))

    def run_until(self, t_end: SimTime) -> list[EventRecord]:
        while self._heap:
            micros, seq = self._heap[0]
            if micros > t_end.micros:
                break
            heapq.heappop(self._heap)
            entry = self._pending.pop(seq, None)
            if entry is None:
                continue  # cancelled
            _, pending = entry
            self.now = SimTime(micros)
            record = EventRecord(self.now, seq, pending.node, pending.agent,
                                 pending.kind, pending.details)
            self._append(record)
            if pending.action is not None:
                pending.action(record)
            for check in self._post_dispatch:
                check(record)
        if t_end > self.now:
            self.now = t_end
        return self.trace


def trace_to_jsonl(trace: list[EventRecord]) -> str:
    return "".join(record.to_jsonl() + "\n" for record in trace)
