"""Leader-majority replication baseline.

A fixed leader appends one batch at a time to a replicated log; an entry
commits once a majority (leader included) has acknowledged it. There are no
elections and no conflicting logs to repair: a heartbeat only retransmits
entries or commit indices a follower has not acknowledged.
"""

from __future__ import annotations

from typing import Optional

from .mempool import Mempool
from .types import GENESIS, Ack, Append, Block, HandleResult, SetTimer, Timer, TxnBatch, cft_quorum


class CftValidator:
    kind = "cft"

    def __init__(
        self,
        index: int,
        n: int,
        mempool: Optional[Mempool] = None,
        *,
        batch_size: int = 500,
        base_timeout: float = 0.01,
        leader: int = 0,
        **_ignored,
    ):
        self.index = index
        self.n = n
        self.quorum = cft_quorum(n)
        self.leader = leader
        self.mempool = mempool if mempool is not None else Mempool()
        self.batch_size = batch_size
        self.heartbeat = base_timeout
        self.log: list[Block] = []
        self.commit_index = 0
        self.committed: list[Block] = [GENESIS]
        self._match = [0] * n
        self._peer_commit = [0] * n
        self._timer_seq = 0
        self._timer_armed = False

    @property
    def committed_round(self) -> int:
        return self.committed[-1].round

    @property
    def is_leader_node(self) -> bool:
        return self.index == self.leader

    def start(self, now: float) -> HandleResult:
        return HandleResult()

    def handle(self, event: object, now: float) -> HandleResult:
        out = HandleResult()
        if isinstance(event, TxnBatch):
            for txn in event.txns:
                if self.mempool.add(txn):
                    out.work.mempool_inserts += 1
            self._try_propose(now, out)
        elif isinstance(event, Append):
            self._on_append(event, out)
        elif isinstance(event, Ack):
            self._on_ack(event, now, out)
        elif isinstance(event, Timer):
            self._on_heartbeat(event, out)
        return out

    def _followers(self):
        return (i for i in range(self.n) if i != self.index)

    def _commit_upto(self, k: int, out: HandleResult) -> None:
        for b in self.log[self.commit_index : k]:
            self.committed.append(b)
            self.mempool.on_commit(b)
            out.commits.append(b)
        self.commit_index = max(self.commit_index, k)

    def _arm(self, out: HandleResult) -> None:
        if not self._timer_armed:
            self._timer_armed = True
            self._timer_seq += 1
            out.timers.append(SetTimer(self._timer_seq, self.heartbeat))

    # --- leader -------------------------------------------------------------

    def _try_propose(self, now: float, out: HandleResult) -> bool:
        if not self.is_leader_node or len(self.log) > self.commit_index:
            return False
        payload, scanned = self.mempool.select(self.batch_size, (), now)
        out.work.mempool_scanned += scanned
        if not payload:
            return False
        parent = self.log[-1].id if self.log else GENESIS.id
        block = Block(parent, len(self.log) + 1, self.index, tuple(payload), None, timestamp=now)
        self.log.append(block)
        self._match[self.index] = len(self.log)
        out.work.blocks_built += 1
        for f in self._followers():
            out.send(f, Append(len(self.log) - 1, (block,), self.commit_index, self.index))
        self._advance_commit(now, out)
        if len(self.log) > self.commit_index:
            self._arm(out)
        return True

    def _advance_commit(self, now: float, out: HandleResult) -> None:
        k = sorted(self._match, reverse=True)[self.quorum - 1]
        if k <= self.commit_index:
            return
        self._commit_upto(k, out)
        self._peer_commit[self.index] = self.commit_index
        if not self._try_propose(now, out):
            for f in self._followers():
                if self._peer_commit[f] < self.commit_index:
                    out.send(f, Append(len(self.log), (), self.commit_index, self.index))
            if any(self._peer_commit[f] < self.commit_index for f in self._followers()):
                self._arm(out)

    def _on_ack(self, a: Ack, now: float, out: HandleResult) -> None:
        if not self.is_leader_node:
            return
        out.work.votes_verified += 1
        self._match[a.sender] = max(self._match[a.sender], a.match_index)
        self._peer_commit[a.sender] = max(self._peer_commit[a.sender], a.commit_index)
        self._advance_commit(now, out)

    def _on_heartbeat(self, t: Timer, out: HandleResult) -> None:
        if not self.is_leader_node or t.round != self._timer_seq:
            return
        self._timer_armed = False
        lagging = False
        for f in self._followers():
            if self._match[f] < len(self.log) or self._peer_commit[f] < self.commit_index:
                m = self._match[f]
                out.send(f, Append(m, tuple(self.log[m:]), self.commit_index, self.index))
                lagging = True
        if lagging:
            self._arm(out)

    # --- follower -----------------------------------------------------------

    def _on_append(self, a: Append, out: HandleResult) -> None:
        if a.start <= len(self.log):
            for i, b in enumerate(a.entries):
                if a.start + i == len(self.log):
                    self.log.append(b)
                    out.work.txns_verified += len(b.payload)
            self._commit_upto(min(a.commit_index, len(self.log)), out)
        out.send(a.sender, Ack(len(self.log), self.commit_index, self.index))
