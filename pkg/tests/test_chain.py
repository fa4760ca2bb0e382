import hashlib
import json
import struct

import numpy as np
import pytest

from blockdfl.chain import (ApprovedUpdate, Block, BlockRejected, Chain, ChainParams,
                            HmacSigner, RejectReason, StakeLedger, UnknownIdentity, Vote,
                            apply_stake_increments, candidate_digest, canonical_serialize,
                            deserialize_block, dump_chain_json, expected_awardees,
                            genesis_block, hash_block, read_chain_log, sha256, signing_bytes,
                            supermajority, validate_and_append, write_chain_log)

GENESIS_HASH = "646032c23ae2c3e7b51fcd362a4ac8eff76353992b4c59ff0efc8d1c26e35ef7"


def proposal(chain, signer, n_yes, n_no=0, update=(0.5, -0.25, 1.0), n_providers=5,
             increment=None, tamper=None):
    """A block extending ``chain`` approved by the first ``n_yes`` verifiers."""
    roles = chain.roles()
    t = chain.tip.round + 1
    agg = roles.aggregators[0]
    providers = tuple(sorted(roles.providers[:n_providers]))
    g = np.array(update)
    digest = candidate_digest(t, agg, providers, g)
    votes = [Vote(v, t, agg, digest, 1 if k < n_yes else 0).signed(signer)
             for k, v in enumerate(roles.verifiers[:n_yes + n_no])]
    if tamper:
        votes = tamper(votes)
    payload = ApprovedUpdate(g, agg, providers)
    draft = Block(t, chain.tip_hash, payload, tuple(votes), (), roles.leader)
    inc = chain.params.stake_increment if increment is None else increment
    incs = tuple((pid, inc) for pid in expected_awardees(draft))
    return Block(t, chain.tip_hash, payload, tuple(votes), incs, roles.leader).signed(signer)


def empty_block(chain, signer):
    return Block(chain.tip.round + 1, chain.tip_hash, creator_id=chain.roles().leader).signed(signer)


def test_sha256_vector():
    assert sha256(b"").hex() == \
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_genesis_layout_and_hash():
    raw = canonical_serialize(genesis_block())
    oracle = struct.pack(">q", -1) + bytes(32) + struct.pack(">qqqqq", 0, 0, 0, -1, 0)
    assert len(raw) == 80 and raw == oracle
    assert hash_block(genesis_block()).hex() == GENESIS_HASH
    assert hashlib.sha256(oracle).hexdigest() == GENESIS_HASH


def test_roundtrip(chain, signer):
    blocks = [genesis_block(), empty_block(chain, signer), proposal(chain, signer, 5, 2)]
    for b in blocks:
        raw = canonical_serialize(b)
        back = deserialize_block(raw)
        assert back == b and canonical_serialize(back) == raw


def test_serialization_sensitivity(chain, signer):
    b = proposal(chain, signer, 5)
    flipped = b.votes[0]
    changed = Block(b.round, b.prev_hash, b.payload,
                    (Vote(flipped.voter_id, flipped.round, flipped.candidate_id, flipped.digest,
                          0, flipped.signature),) + b.votes[1:],
                    b.stake_increments, b.creator_id, b.creator_signature)
    assert canonical_serialize(changed) != canonical_serialize(b)
    assert hash_block(changed) != hash_block(b)


def test_deserialize_rejects_truncation_and_trailing(chain, signer):
    raw = canonical_serialize(proposal(chain, signer, 5))
    with pytest.raises(ValueError):
        deserialize_block(raw[:-1])
    with pytest.raises(ValueError):
        deserialize_block(raw + b"\0")


def test_hmac_signatures():
    s = HmacSigner(3, seed=1)
    sig = s.sign(0, b"msg")
    assert s.verify(0, b"msg", sig)
    assert not s.verify(0, b"msh", sig)
    bad = bytearray(sig)
    bad[0] ^= 1
    assert not s.verify(0, b"msg", bytes(bad))
    assert not s.verify(1, b"msg", sig)
    with pytest.raises(UnknownIdentity):
        s.sign(3, b"msg")
    with pytest.raises(UnknownIdentity):
        s.verify(7, b"msg", sig)


def test_ed25519_signatures():
    pytest.importorskip("cryptography")
    from blockdfl.chain import Ed25519Signer
    s = Ed25519Signer(2, seed=0)
    sig = s.sign(1, b"x")
    assert s.verify(1, b"x", sig) and not s.verify(0, b"x", sig) and not s.verify(1, b"y", sig)
    with pytest.raises(UnknownIdentity):
        s.verify(5, b"x", sig)


def test_empty_block_accepted_without_ledger_change(chain, signer):
    before = chain.ledger.as_dict()
    validate_and_append(chain, empty_block(chain, signer))
    assert chain.ledger.as_dict() == before and len(chain.blocks) == 2


def test_vote_threshold_seven_verifiers(chain, signer):
    with pytest.raises(BlockRejected) as exc:
        chain.append(proposal(chain, signer, 4, 3))
    assert exc.value.reason is RejectReason.INSUFFICIENT_VOTES
    chain.append(proposal(chain, signer, 5, 2))
    assert chain.tip.round == 0


def test_supermajority_rule():
    assert [supermajority(k, 7) for k in range(8)] == [False] * 5 + [True] * 3
    assert not supermajority(2, 3) and supermajority(3, 3)
    assert not supermajority(4, 6) and supermajority(5, 6)


def test_stake_increments(chain, signer):
    b = proposal(chain, signer, 5)
    awarded = expected_awardees(b)
    assert len(awarded) == 11  # 5 providers, 1 aggregator, 5 affirmative verifiers
    before = chain.ledger.as_dict()
    chain.append(b)
    after = chain.ledger.as_dict()
    assert {p for p in after if after[p] != before[p]} == set(awarded)
    assert all(after[p] == before[p] + 5 for p in awarded)
    assert chain.ledger.total() == sum(before.values()) + 55


def test_negative_voters_get_nothing(chain, signer):
    b = proposal(chain, signer, 5, 2)
    no_voters = {v.voter_id for v in b.votes if v.vote == 0}
    assert no_voters and not no_voters & set(expected_awardees(b))


@pytest.mark.parametrize("mutate, reason", [
    (lambda b, c: Block(b.round + 1, b.prev_hash, b.payload, b.votes, b.stake_increments,
                        b.creator_id, b.creator_signature), RejectReason.BAD_ROUND),
    (lambda b, c: Block(b.round, bytes(32), b.payload, b.votes, b.stake_increments,
                        b.creator_id, b.creator_signature), RejectReason.BAD_LINKAGE),
    (lambda b, c: Block(b.round, b.prev_hash, b.payload, b.votes, b.stake_increments,
                        b.creator_id, b"\0" * 32), RejectReason.BAD_CREATOR_SIGNATURE),
    (lambda b, c: Block(b.round, b.prev_hash, ApprovedUpdate(b.payload.global_update + 1,
                                                              b.payload.aggregator_id,
                                                              b.payload.provider_ids),
                        b.votes, b.stake_increments, b.creator_id, b.creator_signature),
     RejectReason.BAD_CREATOR_SIGNATURE),
])
def test_tampering_rejected(chain, signer, mutate, reason):
    b = mutate(proposal(chain, signer, 5), chain)
    with pytest.raises(BlockRejected) as exc:
        chain.append(b)
    assert exc.value.reason is reason
    assert len(chain.blocks) == 1


def test_non_leader_creator_rejected(chain, signer):
    b = proposal(chain, signer, 5)
    other = chain.roles().verifiers[1]
    forged = Block(b.round, b.prev_hash, b.payload, b.votes, b.stake_increments, other).signed(signer)
    with pytest.raises(BlockRejected) as exc:
        chain.append(forged)
    assert exc.value.reason is RejectReason.BAD_CREATOR


def test_vote_checks(chain, signer):
    def duplicate(votes):
        return votes[:4] + [votes[0]]

    def bad_sig(votes):
        v = votes[0]
        return [Vote(v.voter_id, v.round, v.candidate_id, v.digest, v.vote, b"x" * 32)] + votes[1:]

    def outsider(votes):
        v = votes[0]
        pid = chain.roles().providers[0]
        return [Vote(pid, v.round, v.candidate_id, v.digest, 1).signed(signer)] + votes[1:]

    def wrong_digest(votes):
        v = votes[0]
        return [Vote(v.voter_id, v.round, v.candidate_id, bytes(32), 1).signed(signer)] + votes[1:]

    for fn, reason in ((duplicate, RejectReason.BAD_VOTE),
                       (bad_sig, RejectReason.BAD_VOTE_SIGNATURE),
                       (outsider, RejectReason.BAD_VOTE),
                       (wrong_digest, RejectReason.BAD_VOTE)):
        with pytest.raises(BlockRejected) as exc:
            chain.append(proposal(chain, signer, 5, tamper=fn))
        assert exc.value.reason is reason, fn.__name__


def test_wrong_increments_rejected(chain, signer):
    with pytest.raises(BlockRejected) as exc:
        chain.append(proposal(chain, signer, 5, increment=50))
    assert exc.value.reason is RejectReason.BAD_STAKE_INCREMENTS


def test_bad_roles_rejected(chain, signer):
    roles = chain.roles()
    t, agg = 0, roles.verifiers[2]  # a verifier posing as aggregator
    providers = tuple(sorted(roles.providers[:3]))
    g = np.ones(2)
    d = candidate_digest(t, agg, providers, g)
    votes = tuple(Vote(v, t, agg, d, 1).signed(signer) for v in roles.verifiers)
    draft = Block(t, chain.tip_hash, ApprovedUpdate(g, agg, providers), votes, (), roles.leader)
    incs = tuple((p, 5) for p in expected_awardees(draft))
    b = Block(t, chain.tip_hash, draft.payload, votes, incs, roles.leader).signed(signer)
    with pytest.raises(BlockRejected) as exc:
        chain.append(b)
    assert exc.value.reason is RejectReason.BAD_ROLES


def test_empty_block_must_be_bare(chain, signer):
    b = proposal(chain, signer, 5)
    bare = Block(b.round, b.prev_hash, None, b.votes, (), b.creator_id).signed(signer)
    with pytest.raises(BlockRejected) as exc:
        chain.append(bare)
    assert exc.value.reason is RejectReason.MALFORMED


def test_apply_increments_pure():
    ledger = StakeLedger.uniform(3, 10)
    b = Block(0, bytes(32), ApprovedUpdate(np.zeros(1), 0, (1,)), (), ((0, 5), (1, 5)))
    assert apply_stake_increments(ledger, b).as_dict() == {0: 15, 1: 15, 2: 10}
    assert ledger.as_dict() == {0: 10, 1: 10, 2: 10}
    assert apply_stake_increments(ledger, genesis_block()) == ledger


def test_chain_log_and_json(tmp_path, chain, signer):
    chain.append(proposal(chain, signer, 6))
    chain.append(empty_block(chain, signer))
    write_chain_log(chain.blocks, tmp_path / "c.bin")
    assert read_chain_log(tmp_path / "c.bin") == chain.blocks
    dump_chain_json(chain.blocks, tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    assert [d["hash"] for d in doc] == [hash_block(b).hex() for b in chain.blocks]
    assert doc[1]["prev_hash"] == doc[0]["hash"]


def test_replicas_agree(signer):
    a = Chain(ChainParams(4, 7), signer, StakeLedger.uniform(20))
    b = Chain(ChainParams(4, 7), signer, StakeLedger.uniform(20))
    for _ in range(3):
        blk = proposal(a, signer, 5)
        a.append(blk)
        b.append(blk)
    assert a.tip_hash == b.tip_hash and a.ledger == b.ledger
    assert signing_bytes(a.tip) != canonical_serialize(a.tip)
