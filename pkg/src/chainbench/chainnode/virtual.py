"""Deterministic virtual-time target.

Every validator is one serial CPU with a FIFO inbox. A job starts when the
CPU is free, occupies it for the cost the node reports, and releases its
effects (messages, timers, published ledger) when it completes. All
randomness comes from the link model's seeded generator, and ties in the
event heap break by insertion order, so a run is a pure function of its
config and workload.
"""

from __future__ import annotations

import heapq
import itertools
import json
from collections import deque
from typing import Callable, Iterable, Optional

from chainbench import ledger as lg
from chainbench.consensus import Network
from chainbench.consensus.types import Block, SetTimer, Timer
from chainbench.errors import MeasurementError
from chainbench.scripts import Address, SignedTransaction

from .adapter import POLL, NetworkInfo, Receipt, RejectReason, Wait, Worker
from .config import ChainConfig, ConsensusKind
from .node import ClientTxn, CommitRecord, Job, ValidatorNode

# Node events at an instant run before client actions at the same instant,
# so a query at time t sees every ledger published at or before t.
NODE, CLIENT = 0, 1
_IDLE_EPS = 1e-12


class Simulator:
    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(self, at: float, fn: Callable[[], None], priority: int = NODE) -> None:
        heapq.heappush(self._heap, (at, priority, next(self._seq), fn))

    def step(self) -> bool:
        if not self._heap:
            return False
        at, _, _, fn = heapq.heappop(self._heap)
        self.now = at
        self.processed += 1
        fn()
        return True

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def run_until(self, stop: Callable[[], bool], max_time: float) -> bool:
        """Step until ``stop()`` holds (True) or the next event lies past ``max_time`` (False)."""
        while not stop():
            t = self.peek_time()
            if t is None or t > max_time:
                return stop()
            self.step()
        return True


class _Cpu:
    __slots__ = ("inbox", "busy", "busy_until", "timer_tokens")

    def __init__(self) -> None:
        self.inbox: deque = deque()
        self.busy = False
        self.busy_until = 0.0
        self.timer_tokens: dict[int, int] = {}


class VirtualNetwork:
    """A multi-validator chain running on a discrete-event simulator."""

    def __init__(self, config: ChainConfig):
        self.config = config.validate()
        self.sim = Simulator()
        self.link = Network(config.net)
        g = config.gateway
        self.nodes = [ValidatorNode(i, config, record_commits=(i == g)) for i in range(config.num_validators)]
        self.gateway = self.nodes[g]
        self._cpus = [_Cpu() for _ in self.nodes]
        self._ingress: set[tuple[Address, int]] = set()
        self._tokens = itertools.count(1)
        self._publish_listeners: list[Callable[[], None]] = []
        self.submitted = 0
        self.submit_log: list[tuple[float, Address, int]] = []
        self.rejected: dict[str, int] = {}
        self.clock = VirtualClock(self)
        for node in self.nodes:
            self._complete(node.index, node.start(0.0))

    # --- scheduling core ----------------------------------------------------

    def _deliver(self, i: int, event: object) -> None:
        cpu = self._cpus[i]
        cpu.inbox.append(event)
        if not cpu.busy:
            self._start_next(i)

    def _start_next(self, i: int) -> None:
        cpu = self._cpus[i]
        if not cpu.inbox:
            cpu.busy = False
            return
        event = cpu.inbox.popleft()
        if isinstance(event, ClientTxn):
            self._ingress.discard(event.txn.key)
        now = self.sim.now
        job = self.nodes[i].process(event, now)
        cpu.busy = True
        cpu.busy_until = now + job.cost
        self.sim.schedule(cpu.busy_until, lambda: self._finish(i, job))

    def _finish(self, i: int, job: Job) -> None:
        self._complete(i, job)
        self._start_next(i)

    def _complete(self, i: int, job: Job) -> None:
        now = self.sim.now
        node = self.nodes[i]
        for dest, msg in job.sends:
            if dest == i:
                self._cpus[i].inbox.append(msg)
                continue
            at = self.link.schedule(now)
            if at is not None:
                self.sim.schedule(at, lambda d=dest, m=msg: self._deliver(d, m))
        for st in job.timers:
            self._arm(i, st)
        for delay, ev in job.local:
            self.sim.schedule(now + delay, lambda e=ev: self._deliver(i, e))
        if job.publish:
            node.published = node.ledger
            if node is self.gateway:
                for fn in self._publish_listeners:
                    fn()
        cpu = self._cpus[i]
        if not cpu.busy and cpu.inbox:
            self._start_next(i)

    # --- timers: fire after `duration` of idle CPU time ----------------------

    def _arm(self, i: int, st: SetTimer) -> None:
        cpu = self._cpus[i]
        token = next(self._tokens)
        cpu.timer_tokens[st.round] = token
        node = self.nodes[i]
        armed_at = self.sim.now
        busy_at_arm = node.busy_total
        self.sim.schedule(
            armed_at + st.duration,
            lambda: self._timer_check(i, st, token, armed_at, busy_at_arm),
        )

    def _timer_check(self, i: int, st: SetTimer, token: int, armed_at: float, busy_at_arm: float) -> None:
        cpu = self._cpus[i]
        node = self.nodes[i]
        if cpu.timer_tokens.get(st.round) != token:
            return
        if not node.timer_relevant(st.round):
            del cpu.timer_tokens[st.round]
            return
        now = self.sim.now
        in_flight = max(0.0, cpu.busy_until - now) if cpu.busy else 0.0
        busy = node.busy_total - busy_at_arm - in_flight
        idle = (now - armed_at) - busy
        if idle + _IDLE_EPS >= st.duration:
            del cpu.timer_tokens[st.round]
            self._deliver(i, Timer(st.round))
        else:
            self.sim.schedule(
                now + (st.duration - idle),
                lambda: self._timer_check(i, st, token, armed_at, busy_at_arm),
            )

    # --- adapter surface ----------------------------------------------------

    def submit_txn(self, txn: SignedTransaction) -> Receipt:
        g = self.gateway
        key = txn.key
        if key in self._ingress or key in g.mempool:
            return self._reject(RejectReason.DUPLICATE)
        if txn.sender not in g.published:
            return self._reject(RejectReason.UNKNOWN_SENDER)
        if txn.sequence_number < g.mempool.committed_seq(txn.sender):
            return self._reject(RejectReason.STALE)
        if not txn.auth_ok():
            return self._reject(RejectReason.BAD_AUTH)
        if txn.expired(self.sim.now):
            return self._reject(RejectReason.EXPIRED)
        if len(g.mempool) + len(self._ingress) >= self.config.mempool_capacity:
            return self._reject(RejectReason.BACKPRESSURE)
        self._ingress.add(key)
        self.submitted += 1
        self.submit_log.append((self.sim.now, txn.sender, txn.sequence_number))
        self.sim.schedule(self.sim.now, lambda: self._deliver(g.index, ClientTxn(txn)))
        return Receipt.ok()

    def _reject(self, reason: RejectReason) -> Receipt:
        self.rejected[reason.value] = self.rejected.get(reason.value, 0) + 1
        return Receipt.rejected(reason)

    def query_account(self, address: Address) -> lg.AccountState:
        return lg.query_account(self.gateway.published, address)

    def _admin(self, fn: Callable[[lg.LedgerState], lg.LedgerState]) -> None:
        # validate against the gateway first so a failure leaves no validator changed
        fn(self.gateway.ledger)
        for node in self.nodes:
            node.ledger = fn(node.ledger)
            node.published = fn(node.published)

    def create_account(self, address: Address) -> None:
        self._admin(lambda s: lg.create_account(s, address))

    def mint(self, address: Address, amount: int) -> None:
        self._admin(lambda s: lg.mint(s, address, amount))

    def network_info(self) -> NetworkInfo:
        g = self.gateway
        return NetworkInfo(
            num_validators=self.config.num_validators,
            consensus=ConsensusKind(self.config.consensus).value,
            mode="virtual",
            uptime=self.sim.now,
            gateway=g.index,
            committed_txns=g.executed,
            aborted_txns=g.aborted,
            skipped_txns=g.skipped,
        )

    def close(self) -> None:
        self._publish_listeners.clear()

    # --- inspection ---------------------------------------------------------

    def on_gateway_publish(self, fn: Callable[[], None]) -> None:
        self._publish_listeners.append(fn)

    def quiescent(self) -> bool:
        if self._ingress or any(len(n.mempool) for n in self.nodes):
            return False
        if any(c.inbox or c.busy for c in self._cpus):
            return False
        versions = {n.published.version for n in self.nodes}
        return len(versions) == 1

    def settle(self, max_time: float = 60.0) -> bool:
        """Run until every admitted transaction is committed everywhere (or ``max_time`` of sim time passes)."""
        deadline = self.sim.now + max_time
        return self.sim.run_until(self.quiescent, deadline)

    def run_for(self, duration: float) -> None:
        deadline = self.sim.now + duration
        self.sim.run_until(lambda: False, deadline)
        self.sim.now = max(self.sim.now, deadline)

    def committed_chains(self) -> list[list[Block]]:
        return [list(n.consensus.committed) for n in self.nodes]

    def commit_log(self) -> list[CommitRecord]:
        return list(self.gateway.commit_log)

    def ledger_dumps(self) -> list[str]:
        return [lg.dump_json(n.published) for n in self.nodes]

    def state_hashes(self) -> list[str]:
        return [lg.state_hash(n.published) for n in self.nodes]

    def trace_events(self) -> list[dict]:
        if not self.config.trace:
            raise MeasurementError("tracing is disabled; set trace=True in the chain config")
        events = [e for n in self.nodes for e in n.trace]
        events.sort(key=lambda e: (e["time"], e["validator"]))
        return events

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.trace_events():
                fh.write(json.dumps(e, sort_keys=True) + "\n")


class VirtualClock:
    """Runs client workers as coroutines inside the simulator."""

    def __init__(self, net: VirtualNetwork):
        self.net = net
        self._pollers: list[Worker] = []
        net.on_gateway_publish(self._wake_pollers)

    def now(self) -> float:
        return self.net.sim.now

    def _wake_pollers(self) -> None:
        waiting, self._pollers = self._pollers, []
        for w in waiting:
            self.net.sim.schedule(self.net.sim.now, lambda w=w: self._step(w), CLIENT)

    def _step(self, w: Worker) -> None:
        try:
            cmd = next(w)
        except StopIteration:
            self._live -= 1
            return
        if cmd is POLL:
            self._pollers.append(w)
        elif isinstance(cmd, Wait):
            self.net.sim.schedule(self.net.sim.now + max(0.0, cmd.delay), lambda: self._step(w), CLIENT)
        else:
            raise TypeError(f"worker yielded {cmd!r}")

    def run_workers(self, workers: Iterable[Worker], timeout: float, poll_interval: Optional[float] = None) -> bool:
        # POLL resumes on the next gateway publish; poll_interval only matters on a wall clock
        ws = list(workers)
        self._live = len(ws)
        sim = self.net.sim
        for w in ws:
            sim.schedule(sim.now, lambda w=w: self._step(w), CLIENT)
        done = sim.run_until(lambda: self._live == 0, sim.now + timeout)
        self._pollers.clear()
        return done
