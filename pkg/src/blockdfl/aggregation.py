"""Aggregator pipeline: stake filter, median-based testing, softmax selection, averaging."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .chain import Signer, UnknownIdentity, candidate_digest
from .compression import SparseUpdate, densify
from .learner import Dataset, apply_update, evaluate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LocalUpdateMsg:
    provider_id: int
    round: int
    update: SparseUpdate
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return b"local" + struct.pack(">qq", self.round, self.provider_id) + self.update.to_bytes()

    def signed(self, signer: Signer) -> LocalUpdateMsg:
        return LocalUpdateMsg(self.provider_id, self.round, self.update,
                              signer.sign(self.provider_id, self.signing_bytes()))

    def verify(self, signer: Signer) -> bool:
        try:
            return signer.verify(self.provider_id, self.signing_bytes(), self.signature)
        except UnknownIdentity:
            return False


@dataclass(frozen=True, eq=False)
class CandidateGlobalUpdate:
    aggregator_id: int
    round: int
    update: np.ndarray
    provider_ids: tuple[int, ...]
    signature: bytes = b""

    def digest(self) -> bytes:
        return candidate_digest(self.round, self.aggregator_id, self.provider_ids, self.update)

    def signed(self, signer: Signer) -> CandidateGlobalUpdate:
        return CandidateGlobalUpdate(self.aggregator_id, self.round, self.update,
                                     self.provider_ids,
                                     signer.sign(self.aggregator_id, self.digest()))

    def verify(self, signer: Signer) -> bool:
        try:
            return signer.verify(self.aggregator_id, self.digest(), self.signature)
        except UnknownIdentity:
            return False


@dataclass(frozen=True)
class AggregatorConfig:
    c: int = 5
    min_local_updates: int | None = None  # defaults to 3c

    @property
    def sample_size(self) -> int:
        return 3 * self.c

    @property
    def required(self) -> int:
        return self.sample_size if self.min_local_updates is None else self.min_local_updates


@dataclass
class AggregationTrace:
    """Intermediate sets of one aggregation, for inspection and tests."""

    received: list[LocalUpdateMsg] = field(default_factory=list)
    sampled: list[LocalUpdateMsg] = field(default_factory=list)
    scored: list[tuple[LocalUpdateMsg, float]] = field(default_factory=list)
    top_half: list[tuple[LocalUpdateMsg, float]] = field(default_factory=list)
    selected: list[LocalUpdateMsg] = field(default_factory=list)


class InsufficientUpdates(ValueError):
    pass


def weighted_sample_without_replacement(weights, k: int, rng: np.random.Generator) -> list[int]:
    """Sequential draws, renormalizing over what remains; zero total falls back to uniform."""
    weights = np.asarray(weights, dtype=np.float64)
    if k > weights.size:
        raise ValueError(f"cannot draw {k} of {weights.size}")
    remaining = list(range(weights.size))
    picked = []
    for _ in range(k):
        w = weights[remaining]
        total = w.sum()
        p = w / total if total > 0 else np.full(len(remaining), 1.0 / len(remaining))
        j = int(rng.choice(len(remaining), p=p))
        picked.append(remaining.pop(j))
    return picked


def stake_filter_sample(updates, ledger, c: int, seed: int) -> list[LocalUpdateMsg]:
    """Draw 3c updates without replacement, weight ln(1 + provider stake)."""
    updates = list(updates)
    k = 3 * c
    if len(updates) < k:
        raise InsufficientUpdates(f"{len(updates)} updates received, {k} needed")
    if len(updates) == k:
        return updates
    weights = [math.log1p(ledger[m.provider_id]) for m in updates]
    picks = weighted_sample_without_replacement(weights, k, np.random.default_rng(seed))
    return [updates[i] for i in picks]


def score_local_updates(w: np.ndarray, sampled, subset: Dataset) -> list[tuple[LocalUpdateMsg, float]]:
    """q(d) = accuracy on ``subset`` of the model moved by d alone."""
    return [(m, evaluate(apply_update(w, densify(m.update)), subset)) for m in sampled]


def median_partition(scored) -> list[tuple[LocalUpdateMsg, float]]:
    """Updates ranked strictly before the median (descending q, ties by provider id)."""
    ranked = sorted(scored, key=lambda mq: (-mq[1], mq[0].provider_id))
    return ranked[:len(ranked) // 2]


def softmax_select(pool, c: int, seed: int) -> list[LocalUpdateMsg]:
    """c sequential draws without replacement, p_i proportional to exp(q_i) over what remains."""
    pool = list(pool)
    if len(pool) < c:
        raise InsufficientUpdates(f"pool of {len(pool)} cannot supply {c} updates")
    q = np.array([s for _, s in pool], dtype=np.float64)
    weights = np.exp(q - q.max())
    picks = weighted_sample_without_replacement(weights, c, np.random.default_rng(seed))
    return [pool[i][0] for i in picks]


def softmax_probabilities(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    e = np.exp(q - q.max())
    return e / e.sum()


def aggregate(updates) -> np.ndarray:
    """Elementwise mean of the (densified) updates."""
    dense = [densify(u) if isinstance(u, SparseUpdate) else np.asarray(u, dtype=np.float64)
             for u in updates]
    if not dense:
        raise ValueError("nothing to aggregate")
    if len({d.shape for d in dense}) != 1:
        raise ValueError("dimension mismatch among updates")
    return np.mean(np.stack(dense), axis=0)


def verified_inbox(inbox, signer: Signer) -> list[LocalUpdateMsg]:
    good = []
    for m in inbox:
        if m.verify(signer):
            good.append(m)
        else:
            log.debug("dropping update from %s: bad signature", m.provider_id)
    return good


def run_aggregator(inbox, w: np.ndarray, ledger, cfg: AggregatorConfig, seed: int, *,
                   aggregator_id: int, round_idx: int, subset: Dataset, signer: Signer,
                   trace: AggregationTrace | None = None) -> CandidateGlobalUpdate:
    """Honest aggregation of ``inbox`` into a signed candidate global update."""
    received = verified_inbox(inbox, signer)
    if len(received) < cfg.required:
        raise InsufficientUpdates(f"{len(received)} verified updates, {cfg.required} required")
    rng = np.random.default_rng(seed)
    sample_seed, select_seed = (int(s) for s in rng.integers(0, 2**63, size=2))
    sampled = stake_filter_sample(received, ledger, cfg.c, sample_seed)
    scored = score_local_updates(w, sampled, subset)
    top = median_partition(scored)
    chosen = sorted(softmax_select(top, cfg.c, select_seed), key=lambda m: m.provider_id)
    if trace is not None:
        trace.received, trace.sampled, trace.scored = received, sampled, scored
        trace.top_half, trace.selected = top, chosen
    g = aggregate([m.update for m in chosen])
    cand = CandidateGlobalUpdate(aggregator_id, round_idx, g,
                                 tuple(m.provider_id for m in chosen))
    return cand.signed(signer)
