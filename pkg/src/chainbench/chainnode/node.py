"""One validator: consensus replica + commit pipeline (VM and ledger), priced by a cost model.

The node is driven by a scheduler (virtual or wall clock). ``process`` handles
one event and returns a ``Job``: the CPU time it occupied and the effects to
release when that time has elapsed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from chainbench import ledger as lg
from chainbench.consensus import BftValidator, CftValidator, Mempool
from chainbench.consensus.types import (
    Append,
    Block,
    HandleResult,
    Proposal,
    SetTimer,
    SyncResponse,
    Timer,
    TxnBatch,
    event_kind,
    event_round,
)
from chainbench.scripts import Address, Script, SignedTransaction
from chainbench.vm import VmOutcome, VmProgram, compile_script, execute

from .config import ChainConfig, ConsensusKind


@dataclass(frozen=True)
class ClientTxn:
    txn: SignedTransaction


@dataclass(frozen=True)
class GossipFlush:
    pass


@dataclass(frozen=True)
class AdminOp:
    """Out-of-band account setup (phase 1 faucet) applied to every validator."""
    apply: Callable[[lg.LedgerState], lg.LedgerState]
    done: object = None


@dataclass(frozen=True)
class CommitRecord:
    time: float
    sender: Address
    sequence_number: int
    status: str


@dataclass
class Job:
    cost: float = 0.0
    sends: list[tuple[int, object]] = field(default_factory=list)
    timers: list[SetTimer] = field(default_factory=list)
    local: list[tuple[float, object]] = field(default_factory=list)
    publish: bool = False
    done: object = None


def payload_size(msg: object) -> int:
    if isinstance(msg, Proposal):
        return len(msg.block.payload)
    if isinstance(msg, TxnBatch):
        return len(msg.txns)
    if isinstance(msg, SyncResponse):
        return sum(len(b.payload) for b in msg.blocks)
    if isinstance(msg, Append):
        return sum(len(b.payload) for b in msg.entries)
    return 0


def make_consensus(config: ChainConfig, index: int):
    cls = BftValidator if ConsensusKind(config.consensus) is ConsensusKind.BFT else CftValidator
    return cls(
        index,
        config.num_validators,
        Mempool(config.mempool_capacity),
        batch_size=config.batch_size,
        base_timeout=config.base_timeout,
        max_backoff_exp=config.max_backoff_exp,
    )


class ValidatorNode:
    def __init__(self, index: int, config: ChainConfig, *, record_commits: bool = False):
        self.index = index
        self.config = config
        self.costs = config.costs
        self.consensus = make_consensus(config, index)
        self.ledger = lg.LedgerState()
        self.published = self.ledger
        self.busy_total = 0.0
        self.executed = 0
        self.aborted = 0
        self.skipped = 0
        self.record_commits = record_commits
        self.commit_log: list[CommitRecord] = []
        self.trace: Optional[list[dict]] = [] if config.trace else None
        self._programs: dict[Script, VmProgram] = {}
        self._outcomes: dict[tuple[Script, int], VmOutcome] = {}
        self._gossip_buffer: list[SignedTransaction] = []
        self._flush_pending = False
        if ConsensusKind(config.consensus) is ConsensusKind.BFT:
            self.gossip_targets = [i for i in range(config.num_validators) if i != index]
        else:
            leader = self.consensus.leader
            self.gossip_targets = [] if index == leader else [leader]

    @property
    def mempool(self) -> Mempool:
        return self.consensus.mempool

    def timer_relevant(self, round_: int) -> bool:
        if isinstance(self.consensus, BftValidator):
            return round_ >= self.consensus.current_round
        return True

    # --- event processing ---------------------------------------------------

    def start(self, now: float) -> Job:
        res = self.consensus.start(now)
        return self._finish(res, Job(), now)

    def process(self, event: object, now: float) -> Job:
        job = Job()
        c = self.costs
        if isinstance(event, ClientTxn):
            job.cost += c.admission
            res = self.consensus.handle(TxnBatch((event.txn,)), now)
            if self.gossip_targets:
                self._gossip_buffer.append(event.txn)
                if not self._flush_pending:
                    self._flush_pending = True
                    job.local.append((self.config.gossip_interval, GossipFlush()))
        elif isinstance(event, GossipFlush):
            self._flush_pending = False
            batch = TxnBatch(tuple(self._gossip_buffer), self.index)
            self._gossip_buffer = []
            res = HandleResult(messages=[(t, batch) for t in self.gossip_targets])
        elif isinstance(event, AdminOp):
            self.ledger = event.apply(self.ledger)
            job.publish = True
            job.done = event.done
            return job
        else:
            if not isinstance(event, Timer):
                job.cost += c.msg_base
            res = self.consensus.handle(event, now)
        self._record(now, event_kind(event), event_round(event))
        return self._finish(res, job, now)

    def _finish(self, res: HandleResult, job: Job, now: float) -> Job:
        c = self.costs
        w = res.work
        job.cost += (
            w.txns_verified * c.verify_txn
            + w.votes_verified * c.verify_vote
            + w.mempool_inserts * c.mempool_insert
            + w.mempool_scanned * c.mempool_scan
            + w.blocks_built * c.block_build
        )
        for dest, msg in res.messages:
            if dest != self.index:
                job.cost += c.msg_base + payload_size(msg) * c.txn_send
        job.sends = res.messages
        job.timers = res.timers
        records: list[CommitRecord] = []
        for block in res.commits:
            self._record(now + job.cost, "commit", block.round)
            job.cost += self._execute_block(block, records)
            self._record(now + job.cost, "execute", block.round)
            job.publish = True
        for r in records:
            self.commit_log.append(CommitRecord(now + job.cost, r.sender, r.sequence_number, r.status))
        self.busy_total += job.cost
        return job

    def _record(self, t: float, kind: str, round_: Optional[int]) -> None:
        if self.trace is not None:
            self.trace.append({"time": t, "validator": self.index, "event": kind, "round": round_})

    # --- commit pipeline ----------------------------------------------------

    def _outcome(self, txn: SignedTransaction, state: lg.LedgerState) -> VmOutcome:
        program = self._programs.get(txn.script)
        if program is None:
            program = self._programs[txn.script] = compile_script(txn.script)
        if program.reads_state:
            return execute(program, txn.sender, lg.BalanceView(state), txn.max_steps)
        key = (txn.script, txn.max_steps)
        outcome = self._outcomes.get(key)
        if outcome is None:
            outcome = self._outcomes[key] = execute(program, txn.sender, {}, txn.max_steps)
        return outcome

    def _execute_block(self, block: Block, records: list[CommitRecord]) -> float:
        c = self.costs
        cost = 0.0
        state = self.ledger
        for txn in block.payload:
            if lg.validate_txn(state, txn, block.timestamp) is not lg.Verdict.ACCEPT:
                self.skipped += 1
                cost += c.exec_txn
                continue
            outcome = self._outcome(txn, state)
            state, _ = lg.apply_txn(state, txn, outcome)
            self.executed += 1
            if not outcome.ok:
                self.aborted += 1
            cost += (
                c.exec_txn
                + outcome.steps_used * c.exec_step
                + c.storage_txn
                + len(outcome.write_set) * c.storage_write
            )
            if self.record_commits:
                records.append(CommitRecord(0.0, txn.sender, txn.sequence_number, outcome.status.value))
        self.ledger = state
        return cost
