import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockdfl.chain import BlockRejected, Block, RejectReason, Vote
from blockdfl.consensus import (Stage, ConsensusMsg, build_block, distinct_candidates,
                                krum_neighbours, krum_scores, leader_order, malicious_vote,
                                run_consensus, vote)

from conftest import make_candidates
from oracles import krum_bruteforce, vote_bruteforce

EXAMPLE = [[0, 0], [1, 0], [0, 1], [5, 5]]
FOUR = [[0, 0], [0.1, 0], [0, 0.2], [9, 9]]


def test_krum_example():
    s = krum_scores(EXAMPLE, 0.0)
    assert krum_neighbours(4, 0.0) == 2
    assert s[0] == 2 and s[3] == 82
    assert s.tolist() == krum_bruteforce(EXAMPLE, 0.0)


def test_krum_identical_and_scaling():
    assert krum_scores([[1.0, 2.0]] * 4, 0.0).tolist() == [0.0] * 4
    rng = np.random.default_rng(0)
    g = rng.normal(size=(5, 3))
    np.testing.assert_allclose(krum_scores(3 * g, 0.0), 9 * krum_scores(g, 0.0), rtol=1e-12)


def test_krum_neighbours_clamped():
    assert krum_neighbours(2, 0.0) == 1
    assert krum_neighbours(3, 0.0) == 1
    assert krum_neighbours(10, 0.2) == 6
    assert krum_neighbours(10, 0.9) == 1
    with pytest.raises(ValueError):
        krum_neighbours(1, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.lists(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3),
    min_size=n, max_size=n)), st.sampled_from([0.0, 0.2, 1 / 3]))
def test_krum_and_vote_against_bruteforce(g, f):
    s = krum_scores(g, f)
    ref = krum_bruteforce(g, f)
    np.testing.assert_allclose(s, ref, rtol=1e-9, atol=1e-9)
    for i in range(len(g)):
        assert vote(i, ref) == vote_bruteforce(i, ref)


def test_vote_examples():
    assert [vote(i, [1, 2, 3]) for i in range(3)] == [1, 0, 0]
    assert [vote(i, [1, 2]) for i in range(2)] == [0, 0]
    assert [vote(i, [4, 4, 4]) for i in range(3)] == [0, 0, 0]


def test_leader_order():
    assert leader_order([5, 1, 3], ["a", "b", "c"]) == ["b", "c", "a"]
    assert leader_order([2, 2, 1], [9, 4, 7]) == [7, 4, 9]
    assert leader_order([0.0], [3]) == [3]


def test_malicious_vote_is_complement():
    assert [malicious_vote(v) for v in (0, 1)] == [1, 0]


def test_commit_carries_vote_only():
    with pytest.raises(ValueError):
        ConsensusMsg(Stage.PREPARE, 0, 1, bytes(32), 2,
                     vote=Vote(2, 0, 1, bytes(32), 1))
    with pytest.raises(ValueError):
        ConsensusMsg(Stage.COMMIT, 0, 1, bytes(32), 2)


def _round(chain, signer, updates):
    roles = chain.roles()
    cands = make_candidates(roles, 0, signer, updates)
    return roles, cands


def test_five_of_seven_approves(chain, signer):
    roles, cands = _round(chain, signer, FOUR)
    bad = frozenset(roles.verifiers[-2:])
    out = run_consensus(0, cands, roles.verifiers, 0.0, signer, malicious=bad)
    assert out.approved is cands[0] and out.candidates_examined == 1
    assert len(out.votes) == 5 and set(out.supporting_verifier_ids).isdisjoint(bad)
    chain.append(build_block(0, chain.tip_hash, out, roles.leader, 5, signer))
    assert not chain.tip.is_empty


def test_three_negatives_everywhere_gives_empty(chain, signer):
    roles, cands = _round(chain, signer, FOUR)
    out = run_consensus(0, cands, roles.verifiers, 0.0, signer,
                        malicious=frozenset(roles.verifiers[-3:]))
    assert out.approved is None and out.candidates_examined == 4
    assert [t[1:] for t in out.tallies] == [(4, 3), (3, 4), (3, 4), (3, 4)]
    chain.append(build_block(0, chain.tip_hash, out, roles.leader, 5, signer))
    assert chain.tip.is_empty


def test_no_candidates_or_single_candidate(chain, signer):
    roles, cands = _round(chain, signer, [[1.0, 1.0]])
    assert run_consensus(0, [], roles.verifiers, 0.0, signer).approved is None
    assert run_consensus(0, cands, roles.verifiers, 0.0, signer).approved is None


@pytest.mark.parametrize("updates", [[[0, 0], [5, 5]], [[0, 0], [0.1, 0], [9, 9]]])
def test_two_or_three_candidates_never_approve(chain, signer, updates):
    roles, cands = _round(chain, signer, updates)
    assert run_consensus(0, cands, roles.verifiers, 0.0, signer).approved is None


def test_score_computed_once_per_verifier(chain, signer):
    roles, cands = _round(chain, signer, FOUR)
    vs = []
    run_consensus(0, cands, roles.verifiers, 0.0, signer,
                  malicious=frozenset(roles.verifiers[-3:]), verifiers_out=vs)
    assert len(vs) == 7 and all(v.score_calls == 1 for v in vs)


def test_contrarian_votes_complement_honest(chain, signer):
    roles, cands = _round(chain, signer, FOUR)
    vs = []
    run_consensus(0, cands, roles.verifiers, 0.0, signer,
                  malicious=frozenset(roles.verifiers[-3:]), verifiers_out=vs)
    honest = {c.aggregator_id: vs[0].honest_vote(c.aggregator_id) for c in cands}
    for v in vs:
        for c in cands:
            expected = honest[c.aggregator_id] if v.honest else 1 - honest[c.aggregator_id]
            assert (v.honest_vote(c.aggregator_id) if v.honest
                    else malicious_vote(v.honest_vote(c.aggregator_id))) == expected


def test_malicious_leader_yields_empty_valid_block(chain, signer):
    roles, cands = _round(chain, signer, FOUR)
    out = run_consensus(0, cands, roles.verifiers, 0.0, signer, malicious_leader=True)
    assert out.approved is None and out.suppressed
    chain.append(build_block(0, chain.tip_hash, out, roles.leader, 5, signer))
    assert chain.tip.is_empty


def test_leader_cannot_forge_approval(chain, signer):
    roles, cands = _round(chain, signer, FOUR)
    out = run_consensus(0, cands, roles.verifiers, 0.0, signer)
    out.votes = out.votes[:2]
    with pytest.raises(BlockRejected) as exc:
        chain.append(build_block(0, chain.tip_hash, out, roles.leader, 5, signer))
    assert exc.value.reason is RejectReason.INSUFFICIENT_VOTES
    # re-targeting collected votes at another candidate breaks the digest binding
    out = run_consensus(0, cands, roles.verifiers, 0.0, signer)
    out.approved = cands[2]
    with pytest.raises(BlockRejected):
        chain.append(build_block(0, chain.tip_hash, out, roles.leader, 5, signer))


def test_delivery_order_irrelevant(chain, signer):
    roles, cands = _round(chain, signer, [[0, 0], [0.1, 0], [0.2, 0.1], [9, 9]])
    bad = frozenset(roles.verifiers[-2:])
    ref = run_consensus(0, cands, roles.verifiers, 0.0, signer, malicious=bad)
    for s in range(10):
        out = run_consensus(0, cands, roles.verifiers, 0.0, signer, malicious=bad,
                            delivery_rng=np.random.default_rng(s))
        assert out.approved is ref.approved and out.votes == ref.votes


def test_forged_candidate_ignored(chain, signer):
    roles, cands = _round(chain, signer, FOUR)
    c = cands[0]
    forged = type(c)(c.aggregator_id, c.round, c.update + 1, c.provider_ids, c.signature)
    out = run_consensus(0, [forged] + cands[1:], roles.verifiers, 0.0, signer)
    assert c.aggregator_id not in [t[0] for t in out.tallies]
    assert out.candidates_examined == 3


def test_identical_candidates_collapse(chain, signer):
    roles, cands = _round(chain, signer, [[1, 1], [1, 1], [1, 1]])
    assert [c.aggregator_id for c in distinct_candidates(cands)] == [min(roles.aggregators[:3])]


def test_monotone_in_score():
    for n in (3, 4, 6, 9):
        for i in range(n):
            scores = list(range(n))
            assert vote(0, scores) == 1
            assert vote(i, scores) == int(3 * (n - 1 - i) >= 2 * n)
