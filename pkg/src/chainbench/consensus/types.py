"""Blocks, certificates and protocol messages shared by both consensus flavours."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from chainbench.scripts import SignedTransaction, encode_txn

GENESIS_PARENT = b"\x00" * 32


def bft_quorum(n: int) -> int:
    """2f+1 out of n = 3f+1 (rounded so any two quorums intersect in an honest node)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return n - (n - 1) // 3


def cft_quorum(n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return n // 2 + 1


def leader_for_round(round_: int, n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return round_ % n


@dataclass(frozen=True)
class QuorumCert:
    block_id: bytes
    round: int
    voters: frozenset[int]


@dataclass(frozen=True, eq=False)
class Block:
    parent_id: bytes
    round: int
    proposer: int
    payload: tuple[SignedTransaction, ...]
    qc: Optional[QuorumCert]
    timestamp: float = 0.0
    id: bytes = field(default=b"", repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "id", self.compute_id())

    def compute_id(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.parent_id)
        h.update(struct.pack("<QQd", self.round, self.proposer, self.timestamp))
        if self.qc is not None:
            h.update(self.qc.block_id)
            h.update(struct.pack("<Q", self.qc.round))
            voters = sorted(self.qc.voters)
            h.update(struct.pack(f"<{len(voters)}I", *voters))
        for txn in self.payload:
            h.update(encode_txn(txn))
        return h.digest()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Block) and other.id == self.id

    def __hash__(self) -> int:
        return hash(self.id)

    @property
    def short(self) -> str:
        return self.id.hex()[:8]


GENESIS = Block(GENESIS_PARENT, 0, 0, (), None)


def genesis_qc(n: int) -> QuorumCert:
    return QuorumCert(GENESIS.id, 0, frozenset(range(n)))


# --- messages -------------------------------------------------------------

@dataclass(frozen=True)
class TxnBatch:
    txns: tuple[SignedTransaction, ...]
    sender: int = -1


@dataclass(frozen=True)
class Proposal:
    block: Block
    sender: int


@dataclass(frozen=True)
class Vote:
    block_id: bytes
    round: int
    voter: int


@dataclass(frozen=True)
class TimeoutMsg:
    round: int
    high_qc: QuorumCert
    sender: int
    committed_round: int


@dataclass(frozen=True)
class TimeoutCert:
    """Quorum of timeout messages for ``round``; forwarded to replicas still in it."""
    round: int
    signers: frozenset
    sender: int


@dataclass(frozen=True)
class SyncRequest:
    block_id: bytes
    committed_round: int
    sender: int


@dataclass(frozen=True)
class SyncResponse:
    blocks: tuple[Block, ...]
    high_qc: QuorumCert
    sender: int


@dataclass(frozen=True)
class Append:
    """Leader-replication log push: ``entries`` start at log index ``start``."""
    start: int
    entries: tuple[Block, ...]
    commit_index: int
    sender: int


@dataclass(frozen=True)
class Ack:
    match_index: int
    commit_index: int
    sender: int


@dataclass(frozen=True)
class Timer:
    """Local pacemaker (BFT) or heartbeat (CFT) expiry for ``round``."""
    round: int


Event = Union[TxnBatch, Proposal, Vote, TimeoutMsg, TimeoutCert, SyncRequest, SyncResponse, Append, Ack, Timer]


@dataclass(frozen=True)
class SetTimer:
    round: int
    duration: float


@dataclass
class Work:
    """Operation tally for one handled event; the node runtime prices it."""
    txns_verified: int = 0
    votes_verified: int = 0
    mempool_inserts: int = 0
    mempool_scanned: int = 0
    blocks_built: int = 0


@dataclass
class HandleResult:
    messages: list[tuple[int, object]] = field(default_factory=list)
    commits: list[Block] = field(default_factory=list)
    timers: list[SetTimer] = field(default_factory=list)
    work: Work = field(default_factory=Work)

    def send(self, dest: int, msg: object) -> None:
        self.messages.append((dest, msg))

    def broadcast(self, n: int, msg: object) -> None:
        self.messages.extend((dest, msg) for dest in range(n))


def event_kind(event: object) -> str:
    return type(event).__name__.lower()


def event_round(event: object) -> Optional[int]:
    if isinstance(event, Proposal):
        return event.block.round
    if isinstance(event, (Vote, TimeoutMsg, TimeoutCert, Timer)):
        return event.round
    return None
