"""Three-phase benchmark engine: setup, concurrent submission, progress polling.

Throughput follows the per-client sequence-number rule: each client records
(sequence number, local time) at a first query made after its warm-up
transactions and again once all its transactions are committed; the run's
Tps is the mean over clients of (seq_e - seq_s) / (t_e - t_s).
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from chainbench.chainnode import ChainConfig, Mode, spawn_network
from chainbench.chainnode.adapter import POLL, RejectReason, TargetAdapter, Wait
from chainbench.errors import ChainbenchError, ConfigurationError, MeasurementError, RunFailed
from chainbench.scripts import Address, Script, ScriptKind, make_address, script_from_config, sign_txn

DEFAULT_CLIENTS = 12
DEFAULT_REPETITIONS = 5
WARMUP_FRACTION = 0.1
MIN_WARMUP = 10


def default_warmup(total_txns: int, fraction: float = WARMUP_FRACTION, minimum: int = MIN_WARMUP) -> int:
    """10% of the client's transactions, at least 10, always leaving one to measure."""
    w = max(minimum, int(math.floor(total_txns * fraction)))
    return max(0, min(w, total_txns - 1))


@dataclass(frozen=True)
class ClientSpec:
    index: int
    sender: Address
    receiver: Address
    total_txns: int
    warmup_txns: int
    script: Script

    def __post_init__(self) -> None:
        if not isinstance(self.total_txns, int) or self.total_txns < 1:
            raise ConfigurationError("total_txns", "must be a positive integer")
        if not 0 <= self.warmup_txns < self.total_txns:
            raise ConfigurationError("warmup_txns", "must satisfy 0 <= warmup_txns < total_txns")
        if self.sender == self.receiver:
            raise ConfigurationError("receiver", "sender and receiver must differ")

    @property
    def amount(self) -> int:
        if self.script.kind is ScriptKind.TRANSFER:
            return self.script.transfer_params.amount
        return 0


@dataclass(frozen=True)
class ClientsConfig:
    """Workload template: ``total_txns`` is split across ``num_clients`` clients."""

    num_clients: int = DEFAULT_CLIENTS
    total_txns: int = 1000
    script: str = "transfer"
    amount: int = 1
    iterations: int = 0
    warmup_fraction: float = WARMUP_FRACTION
    min_warmup: int = MIN_WARMUP
    warmup_txns: Optional[int] = None

    def validate(self) -> "ClientsConfig":
        if not isinstance(self.num_clients, int) or self.num_clients < 1:
            raise ConfigurationError("num_clients", "must be an integer >= 1")
        if not isinstance(self.total_txns, int) or self.total_txns < self.num_clients:
            raise ConfigurationError("total_txns", "must be an integer >= num_clients")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigurationError("warmup_fraction", "must lie in [0, 1)")
        if self.min_warmup < 0:
            raise ConfigurationError("min_warmup", "must be >= 0")
        try:
            script_from_config(self.script_table(), make_address("validate"))
        except (ValueError, KeyError) as exc:
            raise ConfigurationError("script", str(exc)) from None
        return self

    def script_table(self) -> dict[str, Any]:
        return {"script": self.script, "amount": self.amount, "iterations": self.iterations}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ClientsConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(sorted(unknown)[0], "unknown [clients] key")
        return cls(**data).validate()


def make_clients(cfg: ClientsConfig, *, label: str = "client") -> list[ClientSpec]:
    cfg.validate()
    base, extra = divmod(cfg.total_txns, cfg.num_clients)
    clients = []
    for i in range(cfg.num_clients):
        total = base + (1 if i < extra else 0)
        if cfg.warmup_txns is None:
            warm = default_warmup(total, cfg.warmup_fraction, cfg.min_warmup)
        else:
            warm = cfg.warmup_txns
        sender = make_address(f"{label}-{i}-sender")
        receiver = make_address(f"{label}-{i}-receiver")
        clients.append(ClientSpec(i, sender, receiver, total, warm, script_from_config(cfg.script_table(), receiver)))
    return clients


@dataclass(frozen=True)
class BenchConfig:
    submit_interval: Optional[float] = None  # None: 20 us in virtual time, no pause on a wall clock
    poll_interval: float = 0.1
    timeout: float = 120.0
    retry_delay: float = 1e-3
    mint_amount: Optional[int] = None  # None: exactly txns x amount per sender
    expiration_window: float = 600.0

    def validate(self) -> "BenchConfig":
        if self.submit_interval is not None and self.submit_interval < 0:
            raise ConfigurationError("submit_interval", "must be >= 0")
        if self.poll_interval <= 0:
            raise ConfigurationError("poll_interval", "must be > 0")
        if self.timeout <= 0:
            raise ConfigurationError("timeout", "must be > 0")
        if self.retry_delay <= 0:
            raise ConfigurationError("retry_delay", "must be > 0")
        return self

    def interval_for(self, mode: Mode) -> float:
        if self.submit_interval is not None:
            return self.submit_interval
        return 20e-6 if Mode(mode) is Mode.VIRTUAL else 0.0


@dataclass(frozen=True)
class ClientObservation:
    seq_start: int
    seq_end: int
    t_start: float
    t_end: float
    client: int = 0

    @property
    def tps(self) -> float:
        return (self.seq_end - self.seq_start) / (self.t_end - self.t_start)


@dataclass
class RunMetrics:
    average_tps: float
    per_client_tps: list[float]
    execution_time: float
    submitted: int
    committed: int
    aborted: int
    repetition: int = 0
    seed: Optional[int] = None
    complete: bool = True
    observations: list[ClientObservation] = field(default_factory=list)
    retries: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["observations"] = [asdict(o) for o in self.observations]
        return d


@dataclass
class AggregateMetrics:
    mean_tps: float
    std_tps: float
    mean_execution_time: float
    repetitions: int
    seeds: list[int] = field(default_factory=list)
    committed: int = 0
    aborted: int = 0
    runs: list[RunMetrics] = field(default_factory=list)


# --- the throughput rule ----------------------------------------------------


def compute_average_tps(observations: Sequence[ClientObservation]) -> float:
    if not observations:
        raise MeasurementError("no client observations")
    total = 0.0
    for o in observations:
        dt = o.t_end - o.t_start
        if not dt > 0:
            raise MeasurementError(f"client {o.client}: non-positive measurement window {dt!r}")
        total += (o.seq_end - o.seq_start) / dt
    return total / len(observations)


def measure_execution_time(run: RunMetrics | Sequence[ClientObservation]) -> float:
    """Span from the earliest first query to the latest second query."""
    if isinstance(run, RunMetrics):
        if not run.complete:
            raise MeasurementError("run did not complete; execution time is undefined")
        observations = run.observations
    else:
        observations = run
    if not observations:
        raise MeasurementError("no client observations")
    return max(o.t_end for o in observations) - min(o.t_start for o in observations)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    if not values:
        raise MeasurementError("no values to aggregate")
    return statistics.fmean(values), statistics.pstdev(values)


def aggregate(runs: Sequence[RunMetrics]) -> AggregateMetrics:
    if not runs:
        raise MeasurementError("no runs to aggregate")
    incomplete = [r.repetition for r in runs if not r.complete]
    if incomplete:
        raise MeasurementError(f"partial runs cannot be averaged (repetitions {incomplete})")
    mean, std = mean_std([r.average_tps for r in runs])
    return AggregateMetrics(
        mean_tps=mean,
        std_tps=std,
        mean_execution_time=statistics.fmean(r.execution_time for r in runs),
        repetitions=len(runs),
        seeds=[r.seed for r in runs if r.seed is not None],
        committed=sum(r.committed for r in runs),
        aborted=sum(r.aborted for r in runs),
        runs=list(runs),
    )


# --- one run ----------------------------------------------------------------


def _setup_accounts(clients: Sequence[ClientSpec], target: TargetAdapter, bench: BenchConfig) -> None:
    for c in clients:
        need = c.total_txns * c.amount
        amount = need if bench.mint_amount is None else bench.mint_amount
        if amount < need:
            raise ConfigurationError("mint_amount", f"client {c.index} needs a balance of at least {need}")
        target.create_account(c.sender)
        target.create_account(c.receiver)
        if amount:
            target.mint(c.sender, amount)


def _client_worker(c: ClientSpec, target: TargetAdapter, bench: BenchConfig, interval: float,
                   obs: dict[int, ClientObservation], stats: dict[str, int]):
    clock = target.clock
    seq = 0

    def submit_upto(n: int):
        nonlocal seq
        while seq < n:
            txn = sign_txn(c.sender, seq, c.script, clock.now(), expiration_window=bench.expiration_window)
            receipt = target.submit_txn(txn)
            if receipt.admitted:
                seq += 1
                stats["submitted"] += 1
                if interval > 0:
                    yield Wait(interval)
            elif receipt.reason is RejectReason.BACKPRESSURE:
                stats["retries"] += 1
                yield Wait(bench.retry_delay)
            else:
                raise RunFailed(f"client {c.index}: txn {seq} rejected ({receipt.reason.value})")

    yield from submit_upto(c.warmup_txns)
    # first query only once the warm-up has landed, so it can only raise seq_s
    while True:
        seq_s = target.query_account(c.sender).sequence_number
        t_s = clock.now()
        if seq_s >= c.warmup_txns:
            break
        yield POLL
    yield from submit_upto(c.total_txns)
    while True:
        seq_e = target.query_account(c.sender).sequence_number
        t_e = clock.now()
        obs[c.index] = ClientObservation(seq_s, seq_e, t_s, t_e, c.index)
        if seq_e >= c.total_txns:
            return
        yield POLL


def run_three_phase(
    clients: Sequence[ClientSpec],
    target: TargetAdapter,
    bench: Optional[BenchConfig] = None,
    *,
    repetition: int = 0,
    seed: Optional[int] = None,
) -> RunMetrics:
    bench = (bench or BenchConfig()).validate()
    if not clients:
        raise ConfigurationError("clients", "at least one client is required")
    try:
        info = target.network_info()
        base = info.committed_txns, info.aborted_txns
        _setup_accounts(clients, target, bench)
        interval = bench.interval_for(Mode(info.mode))
        obs: dict[int, ClientObservation] = {}
        stats = {"submitted": 0, "retries": 0}
        workers = [_client_worker(c, target, bench, interval, obs, stats) for c in clients]
        complete = target.clock.run_workers(workers, bench.timeout, bench.poll_interval)
        info = target.network_info()
    except ConfigurationError:
        raise
    except (ChainbenchError, OSError) as exc:
        raise RunFailed(f"target failed during run: {exc}") from exc
    observations = [obs[c.index] for c in clients if c.index in obs]
    complete = complete and len(observations) == len(clients)
    if complete:
        per_client = [o.tps for o in observations]
        avg = compute_average_tps(observations)
        exec_time = measure_execution_time(observations)
    else:
        per_client, avg, exec_time = [], math.nan, math.nan
    return RunMetrics(
        average_tps=avg,
        per_client_tps=per_client,
        execution_time=exec_time,
        submitted=stats["submitted"],
        committed=info.committed_txns - base[0],
        aborted=info.aborted_txns - base[1],
        repetition=repetition,
        seed=seed,
        complete=complete,
        observations=observations,
        retries=stats["retries"],
    )


# --- repetitions --------------------------------------------------------------


@dataclass(frozen=True)
class RunPlan:
    chain: ChainConfig = field(default_factory=ChainConfig)
    clients: ClientsConfig = field(default_factory=ClientsConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    base_seed: int = 0

    def with_chain(self, **changes) -> "RunPlan":
        return replace(self, chain=replace(self.chain, **changes))

    def with_clients(self, **changes) -> "RunPlan":
        return replace(self, clients=replace(self.clients, **changes))

    def to_dict(self) -> dict:
        return {
            "chain": self.chain.to_dict(),
            "clients": asdict(self.clients),
            "bench": asdict(self.bench),
            "base_seed": self.base_seed,
        }


class PartialAggregate(RunFailed):
    def __init__(self, message: str, completed: list[RunMetrics]):
        super().__init__(message)
        self.completed = completed


def run_once(plan: RunPlan, seed: int, repetition: int = 0) -> RunMetrics:
    target = spawn_network(plan.chain.with_seed(seed))
    try:
        return run_three_phase(make_clients(plan.clients), target, plan.bench, repetition=repetition, seed=seed)
    finally:
        target.close()


def repeat_and_aggregate(
    plan: RunPlan,
    k: int = DEFAULT_REPETITIONS,
    *,
    seeds: Optional[Iterable[int]] = None,
    out_dir: Optional[Path] = None,
) -> AggregateMetrics:
    """Run ``k`` repetitions (seeds ``base_seed + i`` unless given) and aggregate them."""
    seed_list = list(seeds) if seeds is not None else [plan.base_seed + i for i in range(k)]
    if len(seed_list) < 1:
        raise ConfigurationError("repetitions", "must be >= 1")
    runs: list[RunMetrics] = []
    for rep, seed in enumerate(seed_list):
        try:
            m = run_once(plan, seed, rep)
        except RunFailed as exc:
            raise PartialAggregate(f"repetition {rep} (seed {seed}) failed: {exc}", runs) from exc
        if out_dir is not None:
            write_run_json(m, plan, out_dir)
        if not m.complete:
            raise PartialAggregate(f"repetition {rep} (seed {seed}) timed out before completion", runs + [m])
        runs.append(m)
    return aggregate(runs)


def write_run_json(m: RunMetrics, plan: RunPlan, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%dT%H%M%S")
    path = out_dir / f"run-{stamp}-{m.seed}.json"
    doc = {"config": plan.to_dict(), "observations": [asdict(o) for o in m.observations], "metrics": m.to_dict()}
    doc["metrics"].pop("observations")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))
    return path
