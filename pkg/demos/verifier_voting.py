"""
Scoring and voting on candidate global updates
==============================================

Verifiers score every candidate by its distance to the closest others and
approve only a candidate that beats at least two thirds of the field.
"""

import numpy as np
from blockdfl.chain import Chain, ChainParams, HmacSigner, StakeLedger
from blockdfl.aggregation import CandidateGlobalUpdate
from blockdfl.consensus import build_block, krum_scores, leader_order, run_consensus, vote

# four candidates; the last one is far from the rest
G = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
scores = krum_scores(G, f=0.0)
print("scores", scores)                    # 2, 3, 3, 82
print("votes ", [vote(i, scores) for i in range(4)])
print("order ", leader_order(scores, ["a", "b", "c", "d"]))

# %%
# A full round on a fresh chain: 20 participants, 4 aggregators, 7 verifiers.
signer = HmacSigner(20, seed=1)
chain = Chain(ChainParams(4, 7), signer, StakeLedger.uniform(20))
roles = chain.roles()
updates = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.2], [9.0, 9.0]]
cands = [CandidateGlobalUpdate(a, 0, np.array(g), roles.providers[:3]).signed(signer)
         for a, g in zip(roles.aggregators, updates)]

# two contrarian verifiers cannot stop an approval
contrarian = frozenset(roles.verifiers[-2:])
outcome = run_consensus(0, cands, roles.verifiers, 0.0, signer, malicious=contrarian)
print("approved aggregator", outcome.approved.aggregator_id, "with", len(outcome.votes), "votes")

block = build_block(0, chain.tip_hash, outcome, roles.leader, 5, signer)
chain.append(block)
print("stake after round 0:", chain.ledger.as_dict())

# three contrarians block every candidate, so the round closes with an empty block
chain2 = Chain(ChainParams(4, 7), signer, StakeLedger.uniform(20))
outcome = run_consensus(0, cands, roles.verifiers, 0.0, signer,
                        malicious=frozenset(roles.verifiers[-3:]))
print("tallies (candidate, yes, no):", outcome.tallies)
chain2.append(build_block(0, chain2.tip_hash, outcome, roles.leader, 5, signer))
print("empty block:", chain2.tip.is_empty)
