"""Wall-clock target: one thread per validator, real sleeps for link delay and CPU cost.

Queries read each validator's last published ledger (an immutable snapshot),
so client queries never take a lock the commit pipeline holds.
"""

from __future__ import annotations

import heapq
import itertools
import queue
import threading
import time
from typing import Callable, Iterable, Optional

from chainbench import ledger as lg
from chainbench.consensus import Network
from chainbench.consensus.types import SetTimer, Timer
from chainbench.errors import RunFailed
from chainbench.scripts import Address, SignedTransaction

from .adapter import POLL, NetworkInfo, Receipt, RejectReason, Wait, Worker
from .config import ChainConfig, ConsensusKind
from .node import AdminOp, ClientTxn, Job, ValidatorNode

_STOP = object()
_START = object()
_DEBT_SLEEP = 0.001
_MAX_CREDIT = 0.05


class DelayScheduler(threading.Thread):
    """Runs callbacks at monotonic deadlines."""

    def __init__(self) -> None:
        super().__init__(name="delay-scheduler", daemon=True)
        self._heap: list = []
        self._seq = itertools.count()
        self._cv = threading.Condition()
        self._stopped = False

    def call_at(self, at: float, fn: Callable[[], None]) -> None:
        with self._cv:
            heapq.heappush(self._heap, (at, next(self._seq), fn))
            self._cv.notify()

    def run(self) -> None:
        while True:
            with self._cv:
                while not self._stopped and (not self._heap or self._heap[0][0] > time.monotonic()):
                    timeout = None if not self._heap else max(0.0, self._heap[0][0] - time.monotonic())
                    self._cv.wait(timeout)
                if self._stopped:
                    return
                _, _, fn = heapq.heappop(self._heap)
            fn()

    def stop(self) -> None:
        with self._cv:
            self._stopped = True
            self._cv.notify()


class WallNetwork:
    def __init__(self, config: ChainConfig):
        self.config = config.validate()
        self._t0 = time.monotonic()
        self.link = Network(config.net)
        self._link_lock = threading.Lock()
        g = config.gateway
        self.nodes = [ValidatorNode(i, config, record_commits=(i == g)) for i in range(config.num_validators)]
        self.gateway = self.nodes[g]
        self._inboxes: list[queue.Queue] = [queue.Queue() for _ in self.nodes]
        self._busy = [0.0] * len(self.nodes)
        self._timer_tokens: list[dict[int, int]] = [{} for _ in self.nodes]
        self._tokens = itertools.count(1)
        self._admission = threading.Lock()
        self._ingress: set[tuple[Address, int]] = set()
        self._errors: list[BaseException] = []
        self.scheduler = DelayScheduler()
        self.scheduler.start()
        self._threads = [
            threading.Thread(target=self._node_loop, args=(i,), name=f"validator-{i}", daemon=True)
            for i in range(len(self.nodes))
        ]
        self._closed = False
        self.clock = WallClock(self.now)
        for q in self._inboxes:
            q.put(_START)
        for t in self._threads:
            t.start()

    def now(self) -> float:
        return time.monotonic() - self._t0

    # --- validator threads --------------------------------------------------

    def _node_loop(self, i: int) -> None:
        node = self.nodes[i]
        inbox = self._inboxes[i]
        debt = 0.0
        try:
            while True:
                event = inbox.get()
                if event is _STOP:
                    return
                began = time.monotonic()
                now = began - self._t0
                if event is _START:
                    job = node.start(now)
                else:
                    if isinstance(event, ClientTxn):
                        with self._admission:
                            self._ingress.discard(event.txn.key)
                    job = node.process(event, now)
                if self.config.simulate_costs:
                    debt += job.cost - (time.monotonic() - began)
                    debt = max(debt, -_MAX_CREDIT)
                    if debt > _DEBT_SLEEP:
                        t = time.monotonic()
                        time.sleep(debt)
                        debt -= time.monotonic() - t
                self._busy[i] += time.monotonic() - began
                self._release(i, job)
        except BaseException as exc:  # surfaced to callers through _check
            self._errors.append(exc)

    def _release(self, i: int, job: Job) -> None:
        for dest, msg in job.sends:
            if dest == i:
                self._inboxes[i].put(msg)
                continue
            now = self.now()
            with self._link_lock:
                at = self.link.schedule(now)
            if at is not None:
                self.scheduler.call_at(self._t0 + at, lambda d=dest, m=msg: self._inboxes[d].put(m))
        for st in job.timers:
            self._arm(i, st)
        for delay, ev in job.local:
            self.scheduler.call_at(time.monotonic() + delay, lambda e=ev: self._inboxes[i].put(e))
        if job.publish:
            self.nodes[i].published = self.nodes[i].ledger
        if isinstance(job.done, threading.Event):
            job.done.set()

    def _arm(self, i: int, st: SetTimer) -> None:
        token = next(self._tokens)
        self._timer_tokens[i][st.round] = token
        armed_at = time.monotonic()
        busy_at_arm = self._busy[i]
        self.scheduler.call_at(armed_at + st.duration, lambda: self._timer_check(i, st, token, armed_at, busy_at_arm))

    def _timer_check(self, i: int, st: SetTimer, token: int, armed_at: float, busy_at_arm: float) -> None:
        if self._timer_tokens[i].get(st.round) != token:
            return
        idle = (time.monotonic() - armed_at) - (self._busy[i] - busy_at_arm)
        if idle >= st.duration:
            self._timer_tokens[i].pop(st.round, None)
            if self.nodes[i].timer_relevant(st.round):
                self._inboxes[i].put(Timer(st.round))
        else:
            self.scheduler.call_at(
                time.monotonic() + (st.duration - idle),
                lambda: self._timer_check(i, st, token, armed_at, busy_at_arm),
            )

    def _check(self) -> None:
        if self._errors:
            raise RunFailed(f"validator thread crashed: {self._errors[0]!r}") from self._errors[0]
        if self._closed:
            raise RunFailed("network is closed")

    # --- adapter surface ----------------------------------------------------

    def submit_txn(self, txn: SignedTransaction) -> Receipt:
        self._check()
        g = self.gateway
        key = txn.key
        with self._admission:
            if key in self._ingress or key in g.mempool:
                return Receipt.rejected(RejectReason.DUPLICATE)
            if txn.sender not in g.published:
                return Receipt.rejected(RejectReason.UNKNOWN_SENDER)
            if txn.sequence_number < g.mempool.committed_seq(txn.sender):
                return Receipt.rejected(RejectReason.STALE)
            if not txn.auth_ok():
                return Receipt.rejected(RejectReason.BAD_AUTH)
            if txn.expired(self.now()):
                return Receipt.rejected(RejectReason.EXPIRED)
            if len(g.mempool) + len(self._ingress) >= self.config.mempool_capacity:
                return Receipt.rejected(RejectReason.BACKPRESSURE)
            self._ingress.add(key)
        self._inboxes[g.index].put(ClientTxn(txn))
        return Receipt.ok()

    def query_account(self, address: Address) -> lg.AccountState:
        self._check()
        return lg.query_account(self.gateway.published, address)

    def _admin(self, fn: Callable[[lg.LedgerState], lg.LedgerState], timeout: float = 30.0) -> None:
        self._check()
        fn(self.gateway.published)
        events = []
        for i in range(len(self.nodes)):
            ev = threading.Event()
            events.append(ev)
            self._inboxes[i].put(AdminOp(fn, ev))
        deadline = time.monotonic() + timeout
        for ev in events:
            if not ev.wait(max(0.0, deadline - time.monotonic())):
                self._check()
                raise RunFailed("account setup did not reach every validator")

    def create_account(self, address: Address) -> None:
        self._admin(lambda s: lg.create_account(s, address))

    def mint(self, address: Address, amount: int) -> None:
        self._admin(lambda s: lg.mint(s, address, amount))

    def network_info(self) -> NetworkInfo:
        g = self.gateway
        return NetworkInfo(
            num_validators=self.config.num_validators,
            consensus=ConsensusKind(self.config.consensus).value,
            mode="wall",
            uptime=self.now(),
            gateway=g.index,
            committed_txns=g.executed,
            aborted_txns=g.aborted,
            skipped_txns=g.skipped,
        )

    def state_hashes(self) -> list[str]:
        return [lg.state_hash(n.published) for n in self.nodes]

    def settle(self, max_time: float = 30.0, poll: float = 0.01) -> bool:
        deadline = time.monotonic() + max_time
        while time.monotonic() < deadline:
            self._check()
            if not self._ingress and not any(len(n.mempool) for n in self.nodes):
                if len({n.published.version for n in self.nodes}) == 1:
                    return True
            time.sleep(poll)
        return False

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for q in self._inboxes:
            q.put(_STOP)
        for t in self._threads:
            t.join(timeout=5)
        self.scheduler.stop()
        self.scheduler.join(timeout=5)

    def __enter__(self) -> "WallNetwork":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class WallClock:
    """Runs each client worker on its own thread; POLL sleeps one poll interval."""

    def __init__(self, now_fn: Callable[[], float], poll_interval: float = 0.1):
        self._now = now_fn
        self.poll_interval = poll_interval

    def now(self) -> float:
        return self._now()

    def run_workers(self, workers: Iterable[Worker], timeout: float, poll_interval: Optional[float] = None) -> bool:
        poll = self.poll_interval if poll_interval is None else poll_interval
        stop = threading.Event()
        errors: list[BaseException] = []

        def drive(w: Worker) -> None:
            try:
                for cmd in w:
                    if stop.is_set():
                        return
                    if cmd is POLL:
                        time.sleep(poll)
                    elif isinstance(cmd, Wait):
                        if cmd.delay > 0:
                            time.sleep(cmd.delay)
                    else:
                        raise TypeError(f"worker yielded {cmd!r}")
            except BaseException as exc:
                errors.append(exc)
                stop.set()

        threads = [threading.Thread(target=drive, args=(w,), daemon=True) for w in workers]
        for t in threads:
            t.start()
        deadline = time.monotonic() + timeout
        for t in threads:
            t.join(max(0.0, deadline - time.monotonic()))
        finished = not any(t.is_alive() for t in threads)
        if not finished:
            stop.set()
            for t in threads:
                t.join(1.0)
        if errors:
            raise errors[0]
        return finished
