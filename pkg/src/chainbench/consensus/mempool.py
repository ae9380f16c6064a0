"""FIFO transaction pool with per-sender sequence readiness."""

from __future__ import annotations

from typing import Iterable, Optional

from chainbench.ledger import Verdict, check_txn
from chainbench.scripts import Address, SignedTransaction

from .types import Block


class Mempool:
    """Arrival-ordered pool.

    A transaction is *ready* when its sequence number is the next one the
    sender will have after every committed and pending block executes. The
    committed sequence tracker applies the same rule as the ledger, so it
    agrees with the ledger without reading it.
    """

    def __init__(self, capacity: int = 100_000):
        self.capacity = capacity
        self._pool: dict[tuple[Address, int], SignedTransaction] = {}
        self._by_sender: dict[Address, set[int]] = {}
        self._committed_seq: dict[Address, int] = {}

    def __len__(self) -> int:
        return len(self._pool)

    def __contains__(self, key: object) -> bool:
        return key in self._pool

    def committed_seq(self, sender: Address) -> int:
        return self._committed_seq.get(sender, 0)

    def add(self, txn: SignedTransaction) -> bool:
        key = txn.key
        if key in self._pool or len(self._pool) >= self.capacity:
            return False
        if txn.sequence_number < self.committed_seq(txn.sender):
            return False
        self._pool[key] = txn
        self._by_sender.setdefault(txn.sender, set()).add(txn.sequence_number)
        return True

    def _discard(self, sender: Address, seq: int) -> None:
        if self._pool.pop((sender, seq), None) is not None:
            seqs = self._by_sender[sender]
            seqs.discard(seq)
            if not seqs:
                del self._by_sender[sender]

    def on_commit(self, block: Block) -> None:
        touched = set()
        for txn in block.payload:
            expected = self.committed_seq(txn.sender)
            if check_txn(expected, txn, block.timestamp) is Verdict.ACCEPT:
                self._committed_seq[txn.sender] = expected + 1
            self._discard(txn.sender, txn.sequence_number)
            touched.add(txn.sender)
        for sender in touched:
            floor = self.committed_seq(sender)
            for seq in [s for s in self._by_sender.get(sender, ()) if s < floor]:
                self._discard(sender, seq)

    def _expected(self, pending: Iterable[Block]) -> dict[Address, int]:
        expected: dict[Address, int] = {}
        for block in pending:
            for txn in block.payload:
                cur = expected.get(txn.sender, self.committed_seq(txn.sender))
                if check_txn(cur, txn, block.timestamp) is Verdict.ACCEPT:
                    expected[txn.sender] = cur + 1
        return expected

    def select(self, limit: int, pending: Iterable[Block], now: float) -> tuple[list[SignedTransaction], int]:
        """Take up to ``limit`` ready transactions in arrival order.

        ``pending`` are the uncommitted ancestors of the block being built,
        oldest first. Returns the batch and how many entries were examined.
        """
        expected = self._expected(pending)
        batch: list[SignedTransaction] = []
        scanned = 0
        for (sender, seq), txn in self._pool.items():
            if len(batch) >= limit:
                break
            scanned += 1
            cur = expected.get(sender)
            if cur is None:
                cur = self.committed_seq(sender)
            if seq == cur and not txn.expired(now):
                batch.append(txn)
                expected[sender] = cur + 1
        return batch, scanned

    def first_ready(self, pending: Iterable[Block], now: float) -> Optional[SignedTransaction]:
        batch, _ = self.select(1, pending, now)
        return batch[0] if batch else None
