"""Chained BFT replica in the HotStuff family.

Blocks carry a QC for their parent. A replica votes for a proposal when its
round is above the last voted round and its QC round is at least the
preferred round (the head of the highest known 2-chain). A block commits once
it heads three QC'd blocks with consecutive rounds.

The replica is a state machine: ``handle`` mutates only the replica itself
and reports every effect (messages, timer requests, commits, work done) in
the returned ``HandleResult``.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Optional

from .mempool import Mempool
from .types import (
    GENESIS,
    Block,
    HandleResult,
    Proposal,
    QuorumCert,
    SetTimer,
    SyncRequest,
    SyncResponse,
    Timer,
    TimeoutCert,
    TimeoutMsg,
    TxnBatch,
    Vote,
    bft_quorum,
    genesis_qc,
    leader_for_round,
)


class SafetyViolation(AssertionError):
    pass


def commit_rule(blocks: Mapping[bytes, Block], certified: Iterable[bytes]) -> list[Block]:
    """Committed chain (oldest first, genesis excluded) implied by a block tree.

    A block commits when it, a child one round later and a grandchild one
    round after that are all certified; its ancestors commit with it.
    """
    cert = set(certified)
    children: dict[bytes, list[Block]] = {}
    for b in blocks.values():
        if b.id != GENESIS.id:
            children.setdefault(b.parent_id, []).append(b)
    heads = []
    for b1 in blocks.values():
        if b1.id not in cert:
            continue
        for b2 in children.get(b1.id, ()):
            if b2.round != b1.round + 1 or b2.id not in cert:
                continue
            if any(b3.round == b2.round + 1 and b3.id in cert for b3 in children.get(b2.id, ())):
                heads.append(b1)
                break
    heads = [h for h in heads if h.id != GENESIS.id]
    if not heads:
        return []
    top = max(heads, key=lambda b: b.round)
    chain = []
    cur = top
    while cur.id != GENESIS.id:
        chain.append(cur)
        cur = blocks[cur.parent_id]
    chain.reverse()
    ids = {b.id for b in chain}
    for h in heads:
        if h.id not in ids:
            raise SafetyViolation(f"conflicting commit heads {h.short} and {top.short}")
    return chain


class BftValidator:
    kind = "bft"

    def __init__(
        self,
        index: int,
        n: int,
        mempool: Optional[Mempool] = None,
        *,
        batch_size: int = 500,
        base_timeout: float = 0.01,
        max_backoff_exp: int = 6,
    ):
        self.index = index
        self.n = n
        self.quorum = bft_quorum(n)
        self.mempool = mempool if mempool is not None else Mempool()
        self.batch_size = batch_size
        self.base_timeout = base_timeout
        self.max_backoff_exp = max_backoff_exp

        gqc = genesis_qc(n)
        self.blocks: dict[bytes, Block] = {GENESIS.id: GENESIS}
        self.qcs: dict[bytes, QuorumCert] = {GENESIS.id: gqc}
        self.high_qc = gqc
        self.preferred_round = 0
        self.last_voted_round = 0
        self.last_proposed_round = 0
        self.current_round = 0
        self.committed: list[Block] = [GENESIS]
        self._committed_ids = {GENESIS.id}
        self._votes: dict[bytes, set[int]] = {}
        self._timeouts: dict[int, set[int]] = {}
        self._tc_streak = 0
        self._timer_duration = base_timeout
        self._payload_commit_qc_round = -1
        self._pending_proposal: Optional[Proposal] = None
        self.last_tc: Optional[TimeoutCert] = None

    # --- queries ------------------------------------------------------------

    @property
    def committed_round(self) -> int:
        return self.committed[-1].round

    @property
    def committed_head(self) -> Block:
        return self.committed[-1]

    def is_leader(self, round_: int) -> bool:
        return leader_for_round(round_, self.n) == self.index

    def pending_chain(self, block_id: bytes) -> Optional[list[Block]]:
        """Uncommitted ancestors of ``block_id`` (inclusive), oldest first.

        None if the block does not extend the committed head.
        """
        chain = []
        head = self.committed_head
        cur = self.blocks[block_id]
        while cur.id != head.id:
            if cur.round <= head.round:
                return None
            chain.append(cur)
            cur = self.blocks[cur.parent_id]
        chain.reverse()
        return chain

    # --- entry points -------------------------------------------------------

    def start(self, now: float) -> HandleResult:
        out = HandleResult()
        self._enter_round(1, now, out)
        return out

    def handle(self, event: object, now: float) -> HandleResult:
        out = HandleResult()
        if isinstance(event, Proposal):
            self._on_proposal(event, now, out)
        elif isinstance(event, Vote):
            self._on_vote(event, now, out)
        elif isinstance(event, TxnBatch):
            for txn in event.txns:
                if self.mempool.add(txn):
                    out.work.mempool_inserts += 1
            self._try_propose(now, out)
        elif isinstance(event, Timer):
            self._on_timer(event, now, out)
        elif isinstance(event, TimeoutMsg):
            self._on_timeout_msg(event, now, out)
        elif isinstance(event, TimeoutCert):
            self._on_tc(event, now, out)
        elif isinstance(event, SyncRequest):
            self._on_sync_request(event, out)
        elif isinstance(event, SyncResponse):
            self._on_sync_response(event, now, out)
        return out

    # --- rounds and proposals -----------------------------------------------

    def _enter_round(self, round_: int, now: float, out: HandleResult) -> None:
        self.current_round = round_
        self._timer_duration = self.base_timeout * 2 ** min(self._tc_streak, self.max_backoff_exp)
        out.timers.append(SetTimer(round_, self._timer_duration))
        for r in [r for r in self._timeouts if r < round_]:
            del self._timeouts[r]
        self._try_propose(now, out)

    def _has_work(self, pending: list[Block], now: float) -> bool:
        if any(b.payload for b in pending):
            return True
        # the QC we would carry is what commits the latest payload; others still need it
        if self._payload_commit_qc_round >= self.high_qc.round:
            return True
        return self.mempool.first_ready(pending, now) is not None

    def _try_propose(self, now: float, out: HandleResult) -> None:
        r = self.current_round
        if not self.is_leader(r) or r <= self.last_proposed_round or r <= self.last_voted_round:
            return
        pending = self.pending_chain(self.high_qc.block_id)
        if pending is None or not self._has_work(pending, now):
            return
        payload, scanned = self.mempool.select(self.batch_size, pending, now)
        block = Block(self.high_qc.block_id, r, self.index, tuple(payload), self.high_qc, timestamp=now)
        self.last_proposed_round = r
        out.work.blocks_built += 1
        out.work.mempool_scanned += scanned
        out.broadcast(self.n, Proposal(block, self.index))

    def _on_proposal(self, p: Proposal, now: float, out: HandleResult) -> None:
        b = p.block
        if b.round < self.current_round or b.proposer != p.sender or not self.is_leader_of(b):
            return
        if b.qc is None or b.qc.block_id != b.parent_id or b.qc.round >= b.round:
            return
        if b.parent_id not in self.blocks:
            self._pending_proposal = p
            out.send(p.sender, SyncRequest(b.parent_id, self.committed_round, self.index))
            return
        out.work.txns_verified += len(b.payload)
        self.blocks.setdefault(b.id, b)
        self._process_qc(b.qc, now, out)
        if b.round > self.current_round:
            self._enter_round(b.round, now, out)
        if (
            b.round == self.current_round
            and b.round > self.last_voted_round
            and b.qc.round >= self.preferred_round
        ):
            self.last_voted_round = b.round
            out.send(leader_for_round(b.round + 1, self.n), Vote(b.id, b.round, self.index))
        self._check_votes(b.id, now, out)

    def is_leader_of(self, b: Block) -> bool:
        return leader_for_round(b.round, self.n) == b.proposer

    # --- votes and certificates ---------------------------------------------

    def _on_vote(self, v: Vote, now: float, out: HandleResult) -> None:
        if not self.is_leader(v.round + 1) or v.block_id in self.qcs:
            return
        out.work.votes_verified += 1
        self._votes.setdefault(v.block_id, set()).add(v.voter)
        self._check_votes(v.block_id, now, out)

    def _check_votes(self, block_id: bytes, now: float, out: HandleResult) -> None:
        voters = self._votes.get(block_id)
        if voters is None or len(voters) < self.quorum or block_id not in self.blocks:
            return
        del self._votes[block_id]
        qc = QuorumCert(block_id, self.blocks[block_id].round, frozenset(voters))
        self._process_qc(qc, now, out)
        self._try_propose(now, out)

    def _process_qc(self, qc: QuorumCert, now: float, out: HandleResult) -> bool:
        block = self.blocks.get(qc.block_id)
        if block is None:
            return False
        self.qcs.setdefault(qc.block_id, qc)
        if qc.round > self.high_qc.round:
            self.high_qc = qc
            self._tc_streak = 0
        if block.id != GENESIS.id:
            parent = self.blocks[block.parent_id]
            self.preferred_round = max(self.preferred_round, parent.round)
            if parent.id != GENESIS.id:
                grand = self.blocks[parent.parent_id]
                if block.round == parent.round + 1 and parent.round == grand.round + 1:
                    self._commit(grand, qc, out)
        if qc.round + 1 > self.current_round:
            self._enter_round(qc.round + 1, now, out)
        return True

    def _commit(self, head: Block, qc: QuorumCert, out: HandleResult) -> None:
        if head.round <= self.committed_round:
            if head.id not in self._committed_ids:
                raise SafetyViolation(
                    f"validator {self.index}: {head.short}@{head.round} conflicts with committed chain"
                )
            return
        chain = []
        cur = head
        while cur.id != self.committed_head.id:
            if cur.round <= self.committed_round:
                raise SafetyViolation(f"validator {self.index}: commit of {head.short} forks committed chain")
            chain.append(cur)
            cur = self.blocks[cur.parent_id]
        chain.reverse()
        for b in chain:
            self.committed.append(b)
            self._committed_ids.add(b.id)
            self.mempool.on_commit(b)
            out.commits.append(b)
        if any(b.payload for b in chain):
            self._payload_commit_qc_round = qc.round

    # --- pacemaker ------------------------------------------------------------

    def _on_timer(self, t: Timer, now: float, out: HandleResult) -> None:
        if t.round != self.current_round:
            return
        self.last_voted_round = max(self.last_voted_round, t.round)
        out.broadcast(self.n, TimeoutMsg(t.round, self.high_qc, self.index, self.committed_round))
        cap = self.base_timeout * 2 ** self.max_backoff_exp
        self._timer_duration = min(self._timer_duration * 2, cap)
        out.timers.append(SetTimer(t.round, self._timer_duration))

    def _on_timeout_msg(self, m: TimeoutMsg, now: float, out: HandleResult) -> None:
        out.work.votes_verified += 1
        if m.sender != self.index and m.high_qc.round < self.high_qc.round:
            blocks = self._sync_blocks(self.high_qc.block_id, m.committed_round)
            out.send(m.sender, SyncResponse(blocks, self.high_qc, self.index))
        if m.high_qc.round > self.high_qc.round and not self._process_qc(m.high_qc, now, out):
            out.send(m.sender, SyncRequest(m.high_qc.block_id, self.committed_round, self.index))
        if m.round < self.current_round:
            tc = self.last_tc
            if tc is not None and tc.round >= m.round and m.sender != self.index:
                out.send(m.sender, TimeoutCert(tc.round, tc.signers, self.index))
            return
        senders = self._timeouts.setdefault(m.round, set())
        senders.add(m.sender)
        if len(senders) >= self.quorum:
            self.last_tc = TimeoutCert(m.round, frozenset(senders), self.index)
            self._tc_streak += 1
            self._enter_round(m.round + 1, now, out)

    def _on_tc(self, tc: TimeoutCert, now: float, out: HandleResult) -> None:
        if tc.round < self.current_round or len(tc.signers) < self.quorum:
            return
        out.work.votes_verified += len(tc.signers)
        self.last_tc = tc
        self._tc_streak += 1
        self._enter_round(tc.round + 1, now, out)

    # --- block sync -----------------------------------------------------------

    def _sync_blocks(self, block_id: bytes, above_round: int) -> tuple[Block, ...]:
        chain = []
        cur = self.blocks.get(block_id)
        while cur is not None and cur.round > above_round:
            chain.append(cur)
            cur = self.blocks.get(cur.parent_id)
        chain.reverse()
        return tuple(chain)

    def _on_sync_request(self, req: SyncRequest, out: HandleResult) -> None:
        seen = {}
        for b in self._sync_blocks(req.block_id, req.committed_round) + self._sync_blocks(
            self.high_qc.block_id, req.committed_round
        ):
            seen[b.id] = b
        blocks = tuple(sorted(seen.values(), key=lambda b: b.round))
        out.send(req.sender, SyncResponse(blocks, self.high_qc, self.index))

    def _on_sync_response(self, resp: SyncResponse, now: float, out: HandleResult) -> None:
        for b in sorted(resp.blocks, key=lambda b: b.round):
            if b.id in self.blocks or b.parent_id not in self.blocks:
                continue
            out.work.txns_verified += len(b.payload)
            self.blocks[b.id] = b
            if b.qc is not None:
                self._process_qc(b.qc, now, out)
        if resp.high_qc.round > self.high_qc.round:
            self._process_qc(resp.high_qc, now, out)
        pending = self._pending_proposal
        if pending is not None and pending.block.parent_id in self.blocks:
            self._pending_proposal = None
            self._on_proposal(pending, now, out)


def handle_event(state: BftValidator, event: object, now: float):
    """Functional wrapper: ``(state, outbound effects, newly committed blocks)``.

    Outbound effects are ``(destination, message)`` pairs; timer requests are
    addressed to the validator itself.
    """
    res = state.handle(event, now)
    outbound = list(res.messages) + [(state.index, t) for t in res.timers]
    return state, outbound, res.commits
