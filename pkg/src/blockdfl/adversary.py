"""Attack strategies: label-flipping providers, worst-update aggregators, contrarian verifiers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .aggregation import (AggregationTrace, AggregatorConfig, CandidateGlobalUpdate,
                          InsufficientUpdates, aggregate, score_local_updates, verified_inbox)
from .chain import Signer
from .consensus import malicious_vote
from .learner import Dataset

__all__ = ["AdversaryConfig", "poison_dataset", "malicious_aggregate", "malicious_vote",
           "assign_malicious"]


@dataclass(frozen=True)
class AdversaryConfig:
    malicious_fraction: float = 0.0
    flip_pairs: tuple[tuple[int, int], ...] = ((1, 7),)
    poison_providers: bool = True
    poison_aggregators: bool = True
    contrarian_verifiers: bool = True
    obstructive_leader: bool = True

    def __post_init__(self):
        if not 0 <= self.malicious_fraction < 1:
            raise ValueError("malicious_fraction must lie in [0, 1)")
        object.__setattr__(self, "flip_pairs",
                           tuple((int(a), int(b)) for a, b in self.flip_pairs))


def poison_dataset(data: Dataset, flip_pairs) -> Dataset:
    """Relabel every sample whose original label is a flip source; features untouched."""
    labels = data.labels.copy()
    for src, dst in flip_pairs:
        if not (0 <= src < data.classes and 0 <= dst < data.classes):
            raise ValueError(f"flip pair {(src, dst)} outside {data.classes} classes")
        labels[data.labels == src] = dst
    return Dataset(data.features, labels, data.classes)


def assign_malicious(n: int, fraction: float, seed: int) -> frozenset[int]:
    """floor(fraction * n) distinct ids, uniform for the seed."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    k = math.floor(Decimal(repr(float(fraction))) * n)
    return frozenset(int(i) for i in np.random.default_rng(seed).choice(n, size=k, replace=False))


def malicious_aggregate(inbox, c: int, w: np.ndarray, subset: Dataset, seed: int, *,
                        aggregator_id: int, round_idx: int, signer: Signer,
                        cfg: AggregatorConfig | None = None,
                        trace: AggregationTrace | None = None) -> CandidateGlobalUpdate:
    """Uniformly sample 3c updates, keep the c with the lowest accuracy, average them.

    Ignores stake entirely. The output is signed like an honest candidate.
    """
    received = verified_inbox(inbox, signer)
    required = (cfg or AggregatorConfig(c)).required
    if len(received) < max(required, 3 * c):
        raise InsufficientUpdates(f"{len(received)} updates, {3 * c} needed")
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(received), size=3 * c, replace=False))
    sampled = [received[i] for i in picks]
    scored = score_local_updates(w, sampled, subset)
    worst = sorted(scored, key=lambda mq: (mq[1], mq[0].provider_id))[:c]
    chosen = sorted((m for m, _ in worst), key=lambda m: m.provider_id)
    if trace is not None:
        trace.received, trace.sampled, trace.scored = received, sampled, scored
        trace.selected = chosen
    g = aggregate([m.update for m in chosen])
    return CandidateGlobalUpdate(aggregator_id, round_idx, g,
                                 tuple(m.provider_id for m in chosen)).signed(signer)
