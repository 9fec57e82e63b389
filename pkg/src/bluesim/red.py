"""Adversary model: scripted infiltration, beaconing, peer-key compromise.

The red agent is not adaptive: its whole behavior is fixed by configuration
before the run, and it observes nothing of the defenders' internal state.
Beacon payloads embed a signature pattern at a configurable corruption level
so detection strength can be dialed from full match down to nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .kernel import SeededRng, SimTime


class RedError(Exception):
    pass


@dataclass(frozen=True)
class KeyCompromise:
    agent_id: str
    at: SimTime


@dataclass(frozen=True)
class RedBehavior:
    red_id: str
    entry_node: str
    target_site: str
    infiltrate_at: SimTime
    first_beacon_delay: float = 0.1
    beacon_period: float = 1.0
    beacon_payload: bytes = b""
    compromised_blue: Optional[KeyCompromise] = None
    log_noise: bool = False
    log_noise_period: float = 2.0

    def __post_init__(self) -> None:
        if self.beacon_period <= 0:
            raise RedError("beacon period must be positive")

    def beacon_times(self, until: SimTime) -> list[SimTime]:
        times = []
        t = self.infiltrate_at.plus_seconds(self.first_beacon_delay)
        while t <= until:
            times.append(t)
            t = t.plus_seconds(self.beacon_period)
        return times


def build_beacon_payload(pattern: bytes, corruption: float, gram_size: int,
                         rng: SeededRng, filler: int = 48) -> bytes:
    """Embed a signature pattern in random filler, keeping a gram fraction.

    corruption 0.0 keeps the whole pattern (full match); corruption c removes
    a suffix so roughly a (1 - c) fraction of the pattern's k-grams survive.
    """
    if not 0.0 <= corruption <= 1.0:
        raise RedError(f"corruption {corruption} outside [0,1]")
    total_grams = len(pattern) - gram_size + 1
    if total_grams < 1:
        raise RedError("pattern shorter than gram size")
    keep_grams = round((1.0 - corruption) * total_grams)
    kept = pattern[:keep_grams + gram_size - 1] if keep_grams > 0 else b""
    return rng.bytes(filler) + kept + rng.bytes(filler)
