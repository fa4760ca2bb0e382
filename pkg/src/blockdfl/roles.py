"""Stake-proportional role selection on a hash ring.

The ring lays participants out in ascending id order, each owning a
half-open interval as long as its stake. A draw maps a 256-bit hash onto
``[0, total_stake)`` by modulo; the owner of that point is selected.
Every draw (hit or duplicate) advances the hash by SHA-256.
"""

from __future__ import annotations

import bisect
import hashlib
from dataclasses import dataclass
from typing import Mapping


@dataclass(frozen=True)
class HashRing:
    ids: tuple[int, ...]
    bounds: tuple[int, ...]  # cumulative upper bounds, bounds[-1] == total_stake

    @property
    def total_stake(self) -> int:
        return self.bounds[-1]

    def interval(self, pid: int) -> tuple[int, int]:
        i = self.ids.index(pid)
        lo = self.bounds[i - 1] if i else 0
        return lo, self.bounds[i]

    def owner(self, point: int) -> int:
        if not 0 <= point < self.total_stake:
            raise ValueError("point outside the ring")
        return self.ids[bisect.bisect_right(self.bounds, point)]

    def positive_ids(self) -> list[int]:
        return [pid for pid in self.ids if self.interval(pid)[1] > self.interval(pid)[0]]


@dataclass(frozen=True)
class RoleAssignment:
    aggregators: tuple[int, ...]
    verifiers: tuple[int, ...]
    providers: tuple[int, ...]

    @property
    def leader(self) -> int:
        return self.verifiers[0]

    def role_of(self, pid: int) -> str:
        if pid in self.aggregators:
            return "aggregator"
        if pid in self.verifiers:
            return "verifier"
        return "provider"


def build_ring(ledger: Mapping[int, int]) -> HashRing:
    ids = tuple(sorted(ledger))
    bounds, acc = [], 0
    for pid in ids:
        stake = int(ledger[pid])
        if stake < 0:
            raise ValueError(f"negative stake for {pid}")
        acc += stake
        bounds.append(acc)
    if acc <= 0:
        raise ValueError("total stake must be positive")
    return HashRing(ids, tuple(bounds))


def select_roles(h_prev: bytes, ring: HashRing, n_aggregators: int,
                 n_verifiers: int) -> RoleAssignment:
    """Aggregators first, then verifiers (first is leader); everyone else provides.

    The provider set may come out empty; whether that is usable is the
    caller's concern.
    """
    eligible = len(ring.positive_ids())
    if n_aggregators < 1 or n_verifiers < 1 or n_aggregators + n_verifiers > eligible:
        raise ValueError(
            f"need 1 <= |A|, |V| and |A| + |V| <= {eligible} participants with positive stake")
    h = bytes(h_prev)
    chosen: list[int] = []
    taken: set[int] = set()
    while len(chosen) < n_aggregators + n_verifiers:
        pid = ring.owner(int.from_bytes(h, "big") % ring.total_stake)
        h = hashlib.sha256(h).digest()
        if pid not in taken:
            taken.add(pid)
            chosen.append(pid)
    providers = tuple(pid for pid in ring.ids if pid not in taken)
    return RoleAssignment(tuple(chosen[:n_aggregators]), tuple(chosen[n_aggregators:]), providers)
