"""Krum scoring, the two-thirds vote rule and the leader-driven three-stage vote.

The message exchange is simulated with an in-memory queue. Within one stage
messages are delivered in sender-id order unless a ``delivery_rng`` is
given, in which case they are shuffled; the outcome must not depend on it.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

import numpy as np

from .aggregation import CandidateGlobalUpdate
from .chain import ApprovedUpdate, Block, Signer, Vote, expected_awardees, supermajority

log = logging.getLogger(__name__)


def krum_neighbours(n: int, f: float) -> int:
    """m = floor((1 - f) n) - 2, clamped to [1, n - 1]."""
    if n < 2:
        raise ValueError("Krum needs at least two candidates")
    if not 0 <= f < 1:
        raise ValueError("f must lie in [0, 1)")
    m = math.floor((1 - Decimal(repr(float(f)))) * n) - 2
    return min(max(m, 1), n - 1)


def krum_scores(updates, f: float) -> np.ndarray:
    """Score of every candidate: sum of squared distances to its m nearest others."""
    x = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    n = x.shape[0]
    m = krum_neighbours(n, f)
    scores = np.empty(n)
    for i in range(n):
        diff = x - x[i]
        d2 = np.einsum("ij,ij->i", diff, diff)
        d2 = np.delete(d2, i)
        scores[i] = np.sort(d2)[:m].sum()
    return scores


def krum_score(i: int, updates, f: float) -> float:
    return float(krum_scores(updates, f)[i])


def vote(i: int, scores) -> int:
    """1 iff G_i scores strictly better than at least 2/3 of |G| candidates."""
    scores = list(scores)
    better = sum(1 for j, s in enumerate(scores) if j != i and scores[i] < s)
    return int(3 * better >= 2 * len(scores))


def leader_order(scores, ids) -> list[int]:
    """Candidate ids, best (lowest) score first, ties by id."""
    return [cid for _, cid in sorted(zip(scores, ids), key=lambda t: (t[0], t[1]))]


def malicious_vote(honest_vote: int) -> int:
    return 1 - honest_vote


class Stage(str, Enum):
    PRE_PREPARE = "pre_prepare"
    PREPARE = "prepare"
    COMMIT = "commit"


@dataclass(frozen=True)
class ConsensusMsg:
    stage: Stage
    round: int
    candidate_id: int
    digest: bytes
    sender_id: int
    vote: Vote | None = None
    signature: bytes = b""

    def __post_init__(self):
        if (self.stage is Stage.COMMIT) != (self.vote is not None):
            raise ValueError("commit messages, and only they, carry a vote")

    def signing_bytes(self) -> bytes:
        body = (f"{self.stage.value}|{self.round}|{self.candidate_id}|{self.sender_id}|"
                .encode() + self.digest)
        if self.vote is not None:
            body += self.vote.signing_bytes()
        return body

    def signed(self, signer: Signer) -> ConsensusMsg:
        return ConsensusMsg(self.stage, self.round, self.candidate_id, self.digest,
                            self.sender_id, self.vote,
                            signer.sign(self.sender_id, self.signing_bytes()))


class UnknownCandidate(KeyError):
    pass


class Verifier:
    """One verifier's state for a round. Scores are computed lazily, once."""

    def __init__(self, vid: int, round_idx: int, candidates, n_verifiers: int, f: float,
                 signer: Signer, honest: bool = True):
        self.id = vid
        self.round = round_idx
        self.candidates = {c.aggregator_id: c for c in candidates}
        self.ids = [c.aggregator_id for c in candidates]
        self.n_verifiers = n_verifiers
        self.f = f
        self.signer = signer
        self.honest = honest
        self.score_calls = 0
        self._scores: dict[int, float] | None = None
        self._prepares: dict[int, set[int]] = defaultdict(set)
        self._committed: set[int] = set()

    def scores(self) -> dict[int, float]:
        if self._scores is None:
            self.score_calls += 1
            raw = krum_scores([self.candidates[i].update for i in self.ids], self.f) \
                if len(self.ids) >= 2 else np.zeros(len(self.ids))
            self._scores = dict(zip(self.ids, raw.tolist()))
        return self._scores

    def honest_vote(self, cid: int) -> int:
        if len(self.ids) < 2:
            return 0
        s = self.scores()
        return vote(self.ids.index(cid), [s[i] for i in self.ids])

    def _check(self, msg: ConsensusMsg) -> bool:
        if msg.candidate_id not in self.candidates:
            raise UnknownCandidate(msg.candidate_id)
        if msg.round != self.round or msg.digest != self.candidates[msg.candidate_id].digest():
            return False
        return self.signer.verify(msg.sender_id, msg.signing_bytes(), msg.signature)

    def _msg(self, stage, cid, vote_rec=None) -> ConsensusMsg:
        return ConsensusMsg(stage, self.round, cid, self.candidates[cid].digest(), self.id,
                            vote_rec).signed(self.signer)

    def on_pre_prepare(self, msg: ConsensusMsg) -> ConsensusMsg | None:
        if not self._check(msg):
            return None
        return self._msg(Stage.PREPARE, msg.candidate_id)

    def on_prepare(self, msg: ConsensusMsg) -> ConsensusMsg | None:
        if not self._check(msg):
            return None
        cid = msg.candidate_id
        self._prepares[cid].add(msg.sender_id)
        if cid in self._committed or not supermajority(len(self._prepares[cid]), self.n_verifiers):
            return None
        self._committed.add(cid)
        bit = self.honest_vote(cid)
        if not self.honest:
            bit = malicious_vote(bit)
        rec = Vote(self.id, self.round, cid, self.candidates[cid].digest(), bit).signed(self.signer)
        return self._msg(Stage.COMMIT, cid, rec)


def distinct_candidates(candidates) -> list[CandidateGlobalUpdate]:
    """Collapse byte-identical global updates, keeping the lowest aggregator id."""
    kept: dict[bytes, CandidateGlobalUpdate] = {}
    for c in sorted(candidates, key=lambda c: c.aggregator_id):
        kept.setdefault(np.asarray(c.update, dtype=">f8").tobytes(), c)
    return list(kept.values())


@dataclass
class RoundOutcome:
    approved: CandidateGlobalUpdate | None
    votes: tuple[Vote, ...] = ()
    supporting_verifier_ids: tuple[int, ...] = ()
    candidates_examined: int = 0
    suppressed: bool = False
    tallies: list[tuple[int, int, int]] = field(default_factory=list)  # (candidate, yes, no)


def _deliver(msgs, rng):
    msgs = sorted(msgs, key=lambda m: m.sender_id)
    if rng is not None:
        msgs = [msgs[i] for i in rng.permutation(len(msgs))]
    return msgs


def run_consensus(round_idx: int, candidates, verifier_ids, f: float, signer: Signer,
                  malicious=frozenset(), malicious_leader: bool | None = None,
                  delivery_rng: np.random.Generator | None = None,
                  verifiers_out: list | None = None) -> RoundOutcome:
    """Leader (``verifier_ids[0]``) walks candidates best-first until one is approved.

    Approval needs more than 2|V|/3 affirmative commits; more than |V|/3
    negative commits (or a full tally without approval) moves on to the
    next candidate. Exhausting the list yields the empty outcome. The
    candidate pool is a set: identical updates from several aggregators are
    scored and voted on once.

    ``malicious`` verifiers vote contrarily; a malicious leader (by default:
    a leader inside ``malicious``) suppresses any approval.
    """
    verifier_ids = list(verifier_ids)
    n_v = len(verifier_ids)
    candidates = distinct_candidates(c for c in candidates if c.verify(signer))
    if not candidates:
        return RoundOutcome(None)
    leader_id = verifier_ids[0]
    verifiers = {vid: Verifier(vid, round_idx, candidates, n_v, f, signer,
                               honest=vid not in malicious)
                 for vid in verifier_ids}
    if verifiers_out is not None:
        verifiers_out.extend(verifiers.values())
    leader = verifiers[leader_id]
    ids = [c.aggregator_id for c in candidates]
    order = leader_order([leader.scores()[i] for i in ids], ids) if len(ids) >= 2 else ids

    outcome = RoundOutcome(None)
    for cid in order:
        outcome.candidates_examined += 1
        pre = leader._msg(Stage.PRE_PREPARE, cid)
        prepares = [m for vid in verifier_ids
                    if (m := verifiers[vid].on_pre_prepare(pre)) is not None]
        commits = []
        for vid in verifier_ids:
            for m in _deliver(prepares, delivery_rng):
                c = verifiers[vid].on_prepare(m)
                if c is not None:
                    commits.append(c)
        yes, no = [], []
        for m in _deliver(commits, delivery_rng):
            if m.sender_id in {v.voter_id for v in yes + no}:
                continue
            if not (signer.verify(m.sender_id, m.signing_bytes(), m.signature)
                    and signer.verify(m.vote.voter_id, m.vote.signing_bytes(), m.vote.signature)):
                continue
            (yes if m.vote.vote == 1 else no).append(m.vote)
        outcome.tallies.append((cid, len(yes), len(no)))
        if supermajority(len(yes), n_v):
            yes.sort(key=lambda v: v.voter_id)
            outcome.approved = next(c for c in candidates if c.aggregator_id == cid)
            outcome.votes = tuple(yes)
            outcome.supporting_verifier_ids = tuple(v.voter_id for v in yes)
            break
        if 3 * len(no) <= n_v:
            log.debug("round %d candidate %d: neither threshold reached", round_idx, cid)
    if malicious_leader is None:
        malicious_leader = leader_id in malicious
    if malicious_leader and outcome.approved is not None:
        outcome = malicious_leader_behavior(outcome)
    return outcome


def malicious_leader_behavior(outcome: RoundOutcome) -> RoundOutcome:
    """A malicious leader discards collected votes and reports an empty round."""
    return RoundOutcome(None, candidates_examined=outcome.candidates_examined,
                        suppressed=True, tallies=outcome.tallies)


def build_block(round_idx: int, prev_hash: bytes, outcome: RoundOutcome, leader_id: int,
                stake_increment: int, signer: Signer) -> Block:
    """The leader's block for this round, signed by the leader."""
    if outcome.approved is None:
        return Block(round_idx, prev_hash, creator_id=leader_id).signed(signer)
    c = outcome.approved
    payload = ApprovedUpdate(c.update, c.aggregator_id, c.provider_ids)
    draft = Block(round_idx, prev_hash, payload, outcome.votes, (), leader_id)
    incs = tuple((pid, stake_increment) for pid in expected_awardees(draft))
    return Block(round_idx, prev_hash, payload, outcome.votes, incs, leader_id).signed(signer)
