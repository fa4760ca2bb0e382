"""Blocks, canonical serialization, signatures, the stake ledger and validation.

Canonical block layout (all integers 8-byte big-endian signed, reals IEEE-754
binary64 big-endian, variable-length fields prefixed by an 8-byte count)::

    round | prev_hash (32 raw bytes) | has_payload
    [payload: global_update (len + f8...) | aggregator_id | provider_ids (len + i8...)]
    votes (len + [voter_id | round | candidate_id | digest (32) | vote | sig (len + bytes)]...)
    stake_increments (len + [participant_id | amount]...)
    creator_id | creator_signature (len + bytes)

An unsigned empty block is therefore 80 bytes long.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from . import roles

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)
DEFAULT_STAKE_INCREMENT = 5
DEFAULT_INITIAL_STAKE = 10


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _i8(v: int) -> bytes:
    return struct.pack(">q", v)


def _blob(b: bytes) -> bytes:
    return _i8(len(b)) + b


# ----------------------------------------------------------------------------
# identities and signatures


class UnknownIdentity(KeyError):
    pass


class Signer(Protocol):
    """Signature scheme keyed by participant id."""

    def sign(self, participant_id: int, data: bytes) -> bytes: ...

    def verify(self, participant_id: int, data: bytes, signature: bytes) -> bool: ...


class HmacSigner:
    """Keyed-hash stand-in for real signatures.

    Each participant's secret is derived from a registry seed. Verification
    consults the same registry, which is the simulation's model of
    "everyone knows everyone's public key". Not secure against a party that
    holds the registry; it only makes tampering and impersonation detectable
    inside the simulator.
    """

    def __init__(self, n_participants: int, seed: int):
        self._keys = {
            pid: sha256(b"blockdfl-key" + _i8(seed) + _i8(pid))
            for pid in range(n_participants)
        }

    def _key(self, pid: int) -> bytes:
        try:
            return self._keys[pid]
        except KeyError:
            raise UnknownIdentity(pid) from None

    def sign(self, participant_id: int, data: bytes) -> bytes:
        return hmac.new(self._key(participant_id), data, hashlib.sha256).digest()

    def verify(self, participant_id: int, data: bytes, signature: bytes) -> bool:
        expected = self.sign(participant_id, data)
        return hmac.compare_digest(expected, bytes(signature))


class Ed25519Signer:
    """Asymmetric alternative backed by ``cryptography`` (optional dependency)."""

    def __init__(self, n_participants: int, seed: int):
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        self._private = {
            pid: Ed25519PrivateKey.from_private_bytes(
                sha256(b"blockdfl-ed25519" + _i8(seed) + _i8(pid)))
            for pid in range(n_participants)
        }
        self.public_keys = {pid: k.public_key() for pid, k in self._private.items()}

    def sign(self, participant_id: int, data: bytes) -> bytes:
        try:
            return self._private[participant_id].sign(data)
        except KeyError:
            raise UnknownIdentity(participant_id) from None

    def verify(self, participant_id: int, data: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature

        try:
            key = self.public_keys[participant_id]
        except KeyError:
            raise UnknownIdentity(participant_id) from None
        try:
            key.verify(bytes(signature), data)
        except InvalidSignature:
            return False
        return True


# ----------------------------------------------------------------------------
# block data model


@dataclass(frozen=True, eq=False)
class ApprovedUpdate:
    global_update: np.ndarray
    aggregator_id: int
    provider_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "global_update",
                           np.asarray(self.global_update, dtype=np.float64))
        object.__setattr__(self, "provider_ids", tuple(int(p) for p in self.provider_ids))

    def __eq__(self, other):
        if not isinstance(other, ApprovedUpdate):
            return NotImplemented
        return (self.aggregator_id == other.aggregator_id
                and self.provider_ids == other.provider_ids
                and np.array_equal(self.global_update, other.global_update))


def candidate_digest(round_idx: int, aggregator_id: int, provider_ids, update) -> bytes:
    """Content hash that votes bind to: round, aggregator, providers and G."""
    update = np.asarray(update, dtype=np.float64)
    return sha256(b"".join([
        b"candidate", _i8(round_idx), _i8(aggregator_id),
        _i8(len(provider_ids)), *(_i8(p) for p in provider_ids),
        _i8(update.size), update.astype(">f8").tobytes(),
    ]))


@dataclass(frozen=True)
class Vote:
    voter_id: int
    round: int
    candidate_id: int
    digest: bytes
    vote: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return b"vote" + _i8(self.round) + _i8(self.candidate_id) + self.digest + _i8(self.vote)

    def signed(self, signer: Signer) -> Vote:
        return Vote(self.voter_id, self.round, self.candidate_id, self.digest, self.vote,
                    signer.sign(self.voter_id, self.signing_bytes()))


@dataclass(frozen=True)
class Block:
    round: int
    prev_hash: bytes
    payload: ApprovedUpdate | None = None
    votes: tuple[Vote, ...] = ()
    stake_increments: tuple[tuple[int, int], ...] = ()
    creator_id: int = -1
    creator_signature: bytes = b""

    @property
    def is_empty(self) -> bool:
        return self.payload is None

    def signed(self, signer: Signer) -> Block:
        sig = signer.sign(self.creator_id, signing_bytes(self))
        return Block(self.round, self.prev_hash, self.payload, self.votes,
                     self.stake_increments, self.creator_id, sig)


def genesis_block() -> Block:
    return Block(round=-1, prev_hash=ZERO_HASH)


def _serialize(block: Block, with_signature: bool) -> bytes:
    parts = [_i8(block.round), block.prev_hash]
    if block.payload is None:
        parts.append(_i8(0))
    else:
        p = block.payload
        parts += [_i8(1), _i8(p.global_update.size), p.global_update.astype(">f8").tobytes(),
                  _i8(p.aggregator_id), _i8(len(p.provider_ids)),
                  *(_i8(i) for i in p.provider_ids)]
    parts.append(_i8(len(block.votes)))
    for v in block.votes:
        parts += [_i8(v.voter_id), _i8(v.round), _i8(v.candidate_id), v.digest,
                  _i8(v.vote), _blob(v.signature)]
    parts.append(_i8(len(block.stake_increments)))
    for pid, amount in block.stake_increments:
        parts += [_i8(pid), _i8(amount)]
    parts.append(_i8(block.creator_id))
    if with_signature:
        parts.append(_blob(block.creator_signature))
    return b"".join(parts)


def canonical_serialize(block: Block) -> bytes:
    return _serialize(block, with_signature=True)


def signing_bytes(block: Block) -> bytes:
    """Bytes covered by the creator signature (everything but the signature)."""
    return _serialize(block, with_signature=False)


def hash_block(block: Block) -> bytes:
    return sha256(canonical_serialize(block))


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ValueError(f"truncated block at byte {self.pos}")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def int(self) -> int:
        return struct.unpack(">q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.int())


def deserialize_block(data: bytes) -> Block:
    r = _Reader(data)
    round_idx = r.int()
    prev = r.take(HASH_SIZE)
    flag = r.int()
    payload = None
    if flag == 1:
        n = r.int()
        update = np.frombuffer(r.take(8 * n), dtype=">f8").astype(np.float64)
        agg = r.int()
        providers = tuple(r.int() for _ in range(r.int()))
        payload = ApprovedUpdate(update, agg, providers)
    elif flag != 0:
        raise ValueError(f"bad payload flag {flag}")
    votes = []
    for _ in range(r.int()):
        votes.append(Vote(r.int(), r.int(), r.int(), r.take(HASH_SIZE), r.int(), r.blob()))
    incs = tuple((r.int(), r.int()) for _ in range(r.int()))
    creator = r.int()
    sig = r.blob()
    if r.pos != len(data):
        raise ValueError(f"{len(data) - r.pos} trailing bytes after block")
    return Block(round_idx, prev, payload, tuple(votes), incs, creator, sig)


# ----------------------------------------------------------------------------
# stake ledger


class StakeLedger:
    """participant id -> nonnegative integer stake."""

    def __init__(self, stakes: Mapping[int, int]):
        self._stakes = {int(k): int(v) for k, v in sorted(stakes.items())}
        if any(v < 0 for v in self._stakes.values()):
            raise ValueError("stake cannot be negative")
        if self.total() <= 0:
            raise ValueError("total stake must be positive")

    @classmethod
    def uniform(cls, n: int, stake: int = DEFAULT_INITIAL_STAKE) -> StakeLedger:
        return cls({pid: stake for pid in range(n)})

    def __getitem__(self, pid: int) -> int:
        return self._stakes[pid]

    def __contains__(self, pid) -> bool:
        return pid in self._stakes

    def __iter__(self):
        return iter(self._stakes)

    def __len__(self):
        return len(self._stakes)

    def __eq__(self, other):
        return isinstance(other, StakeLedger) and self._stakes == other._stakes

    def items(self):
        return self._stakes.items()

    def as_dict(self) -> dict[int, int]:
        return dict(self._stakes)

    def total(self) -> int:
        return sum(self._stakes.values())

    def share(self, ids) -> float:
        return sum(self._stakes[i] for i in ids) / self.total()

    def copy(self) -> StakeLedger:
        return StakeLedger(self._stakes)


def apply_stake_increments(ledger: StakeLedger, block: Block) -> StakeLedger:
    out = ledger.as_dict()
    for pid, amount in block.stake_increments:
        if pid not in out:
            raise UnknownIdentity(pid)
        if amount < 0:
            raise ValueError("stake increments are nonnegative")
        out[pid] += amount
    return StakeLedger(out)


def expected_awardees(block: Block) -> list[int]:
    """Providers, aggregator and affirmative voters of an approved update, ascending."""
    if block.payload is None:
        return []
    ids = set(block.payload.provider_ids) | {block.payload.aggregator_id}
    ids |= {v.voter_id for v in block.votes if v.vote == 1}
    return sorted(ids)


# ----------------------------------------------------------------------------
# validation


class RejectReason(str, Enum):
    BAD_ROUND = "bad_round"
    BAD_LINKAGE = "bad_linkage"
    MALFORMED = "malformed"
    BAD_CREATOR = "bad_creator"
    BAD_CREATOR_SIGNATURE = "bad_creator_signature"
    BAD_VOTE = "bad_vote"
    BAD_VOTE_SIGNATURE = "bad_vote_signature"
    INSUFFICIENT_VOTES = "insufficient_votes"
    BAD_ROLES = "bad_roles"
    BAD_STAKE_INCREMENTS = "bad_stake_increments"


class BlockRejected(Exception):
    def __init__(self, reason: RejectReason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class ChainParams:
    n_aggregators: int
    n_verifiers: int
    stake_increment: int = DEFAULT_STAKE_INCREMENT


def supermajority(count: int, n: int) -> bool:
    """count > 2n/3, exactly."""
    return 3 * count > 2 * n


@dataclass
class Chain:
    """One participant's replica: blocks plus the ledger they imply."""

    params: ChainParams
    signer: Signer
    ledger: StakeLedger
    blocks: list[Block] = field(default_factory=lambda: [genesis_block()])
    _tip_hash: bytes = b""

    def __post_init__(self):
        self._tip_hash = hash_block(self.blocks[-1])

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_hash(self) -> bytes:
        return self._tip_hash

    def roles(self) -> roles.RoleAssignment:
        ring = roles.build_ring(self.ledger.as_dict())
        return roles.select_roles(self._tip_hash, ring, self.params.n_aggregators,
                                  self.params.n_verifiers)

    def validate(self, block: Block) -> None:
        """Raise :class:`BlockRejected` unless ``block`` may extend this chain."""
        if block.round != self.tip.round + 1:
            raise BlockRejected(RejectReason.BAD_ROUND,
                                f"expected round {self.tip.round + 1}, got {block.round}")
        if block.prev_hash != self._tip_hash:
            raise BlockRejected(RejectReason.BAD_LINKAGE)
        assignment = self.roles()
        if block.creator_id != assignment.leader:
            raise BlockRejected(RejectReason.BAD_CREATOR,
                                f"creator {block.creator_id} is not leader {assignment.leader}")
        try:
            ok = self.signer.verify(block.creator_id, signing_bytes(block),
                                    block.creator_signature)
        except UnknownIdentity:
            ok = False
        if not ok:
            raise BlockRejected(RejectReason.BAD_CREATOR_SIGNATURE)

        if block.payload is None:
            if block.votes or block.stake_increments:
                raise BlockRejected(RejectReason.MALFORMED,
                                    "empty block carries votes or stake increments")
            return

        p = block.payload
        if not np.all(np.isfinite(p.global_update)):
            raise BlockRejected(RejectReason.MALFORMED, "non-finite global update")
        if p.aggregator_id not in assignment.aggregators:
            raise BlockRejected(RejectReason.BAD_ROLES, "aggregator was not selected this round")
        if not p.provider_ids or not set(p.provider_ids) <= set(assignment.providers) \
                or len(set(p.provider_ids)) != len(p.provider_ids):
            raise BlockRejected(RejectReason.BAD_ROLES, "provider ids invalid for this round")

        digest = candidate_digest(block.round, p.aggregator_id, p.provider_ids, p.global_update)
        verifiers = set(assignment.verifiers)
        seen = set()
        affirmative = 0
        for v in block.votes:
            if v.voter_id not in verifiers or v.voter_id in seen:
                raise BlockRejected(RejectReason.BAD_VOTE, f"vote from {v.voter_id}")
            if v.round != block.round or v.candidate_id != p.aggregator_id \
                    or v.digest != digest or v.vote not in (0, 1):
                raise BlockRejected(RejectReason.BAD_VOTE, "vote does not bind this update")
            if not self.signer.verify(v.voter_id, v.signing_bytes(), v.signature):
                raise BlockRejected(RejectReason.BAD_VOTE_SIGNATURE, f"voter {v.voter_id}")
            seen.add(v.voter_id)
            affirmative += v.vote
        if not supermajority(affirmative, self.params.n_verifiers):
            raise BlockRejected(RejectReason.INSUFFICIENT_VOTES,
                                f"{affirmative} affirmative of {self.params.n_verifiers}")
        expected = tuple((pid, self.params.stake_increment) for pid in expected_awardees(block))
        if tuple(block.stake_increments) != expected:
            raise BlockRejected(RejectReason.BAD_STAKE_INCREMENTS)

    def append(self, block: Block) -> None:
        self.validate(block)
        self.ledger = apply_stake_increments(self.ledger, block)
        self.blocks.append(block)
        self._tip_hash = hash_block(block)


def validate_and_append(chain: Chain, block: Block) -> Chain:
    chain.append(block)
    return chain


# ----------------------------------------------------------------------------
# export / import


def write_chain_log(blocks, path) -> None:
    """Length-prefixed binary log of canonical blocks."""
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            for b in blocks:
                fh.write(_blob(canonical_serialize(b)))
    except OSError as exc:
        raise OSError(f"writing chain log {path}: {exc}") from exc


def read_chain_log(path) -> list[Block]:
    data = Path(path).read_bytes()
    r = _Reader(data)
    blocks = []
    while r.pos < len(data):
        blocks.append(deserialize_block(r.blob()))
    return blocks


def block_to_dict(block: Block) -> dict:
    p = block.payload
    return {
        "round": block.round,
        "hash": hash_block(block).hex(),
        "prev_hash": block.prev_hash.hex(),
        "payload": None if p is None else {
            "aggregator_id": p.aggregator_id,
            "provider_ids": list(p.provider_ids),
            "global_update": p.global_update.tolist(),
        },
        "votes": [{"voter_id": v.voter_id, "candidate_id": v.candidate_id, "vote": v.vote,
                   "digest": v.digest.hex(), "signature": v.signature.hex()}
                  for v in block.votes],
        "stake_increments": [list(x) for x in block.stake_increments],
        "creator_id": block.creator_id,
        "creator_signature": block.creator_signature.hex(),
    }


def dump_chain_json(blocks, path) -> None:
    Path(path).write_text(json.dumps([block_to_dict(b) for b in blocks], indent=1))
