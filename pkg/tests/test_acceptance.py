"""The nine acceptance criteria, each at its stated tolerance and runtime budget.

Every test records a PASS/FAIL line that conftest prints in the terminal summary.
"""

import random
import time
from itertools import product

import pytest

from chainbench import bench as bn
from chainbench.bench import BenchConfig, ClientsConfig, RunMetrics, RunPlan, make_clients, run_three_phase
from chainbench.chainnode import ChainConfig, spawn_network
from chainbench.cli import main as cli_main
from chainbench.consensus import NetConfig
from chainbench.experiments import PlanKind, make_plan, run_plan
from chainbench.scripts import make_address, make_vm_heavy
from chainbench.vm import compile_script, execute

import oracles
from conftest import ACCEPTANCE
from helpers import observed_run, oracle_rates


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (ok, detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


class Budget:
    def __init__(self, seconds: float):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0

    @property
    def ok(self) -> bool:
        return self.elapsed < self.seconds

    def __str__(self) -> str:
        return f"[{self.elapsed:.2f}s / {self.seconds:.0f}s]"


def test_c1_tps_formula_fidelity():
    rng = random.Random(2024)
    worst = 0.0
    with Budget(1.0) as b:
        for _ in range(1000):
            pairs = []
            for _ in range(rng.randint(1, 24)):
                ss = rng.randint(0, 10**6)
                ts = rng.uniform(0, 1e4)
                pairs.append((ss, ss + rng.randint(0, 10**6), ts, ts + rng.uniform(1e-6, 1e4)))
            got = bn.compute_average_tps([bn.ClientObservation(*p, i) for i, p in enumerate(pairs)])
            want = oracles.tps_formula(pairs)
            if want:
                worst = max(worst, abs(got - want) / abs(want))
            elif got:
                worst = float("inf")
    record(1, worst < 1e-12 and b.ok, f"max relative error {worst:.2e} {b}")


def test_c2_commit_log_oracle():
    mismatches = 0
    with Budget(30.0) as b:
        for seed in range(5):
            net, clients, m = observed_run(seed, num_clients=12, total=12 * 500)
            assert m.complete
            mismatches += sum(a != o for a, o in zip(m.per_client_tps, oracle_rates(net, clients, m)))
    record(2, mismatches == 0 and b.ok, f"{mismatches} per-client mismatches over 5 seeds x 12 clients {b}")


SAFETY_SEEDS = 112  # 9 combinations x 112 > 1000 runs


def _safety_run(n: int, drop: float, seed: int):
    net = spawn_network(ChainConfig(num_validators=n, net=NetConfig(drop_rate=drop, seed=seed)))
    clients = make_clients(ClientsConfig(num_clients=3, total_txns=12, warmup_txns=1), label=f"s{seed}")
    m = run_three_phase(clients, net, BenchConfig(timeout=60.0), seed=seed)
    settled = net.settle(60.0)
    chains = net.committed_chains()
    conflicts = 0
    for h in range(max(len(c) for c in chains)):
        ids = {c[h].id for c in chains if len(c) > h}
        conflicts += len(ids) > 1
    admitted = sorted((s, q) for _, s, q in net.submit_log)
    exactly_once = all(sorted(t.key for blk in c for t in blk.payload) == admitted for c in chains)
    replicated = len(set(net.state_hashes())) == 1
    return m.complete and settled, conflicts, exactly_once, replicated


@pytest.fixture(scope="module")
def safety_results():
    t0 = time.perf_counter()
    results = {}
    for n, drop in product((1, 4, 7), (0.0, 0.05, 0.2)):
        for seed in range(SAFETY_SEEDS):
            results[(n, drop, seed)] = _safety_run(n, drop, seed)
    return results, time.perf_counter() - t0


def test_c3_consensus_safety(safety_results):
    results, elapsed = safety_results
    conflicts = sum(r[1] for r in results.values())
    unsettled = [k for k, r in results.items() if not r[0]]
    fault_free_bad = [k for k, r in results.items() if k[1] == 0.0 and not r[2]]
    ok = len(results) >= 1000 and conflicts == 0 and not fault_free_bad and not unsettled and elapsed < 300
    record(
        3,
        ok,
        f"{len(results)} runs, {conflicts} conflicting heights, {len(fault_free_bad)} fault-free runs "
        f"missing/duplicating txns, {len(unsettled)} unsettled [{elapsed:.1f}s / 300s]",
    )


def test_c4_replication(safety_results):
    results, _ = safety_results
    diverged = [k for k, r in results.items() if not r[3]]
    record(4, not diverged, f"{len(results) - len(diverged)}/{len(results)} runs hash-identical")


def test_c5_ablation_ordering():
    with Budget(120.0) as b:
        report = run_plan(make_plan(PlanKind.ABLATION, RunPlan(), quick=True))
    assert all(r.committed == 2000 * r.metadata["repetitions"] for r in report.rows)
    failed = [v.name for v in report.verdicts if not v.passed]
    tps = ", ".join(f"{r.variable}={r.mean_tps:.1f}" for r in report.rows)
    record(5, len(report.verdicts) == 4 and not failed and b.ok, f"{tps}; failed {failed} {b}")


def test_c6_peer_sweep_trend():
    with Budget(180.0) as b:
        report = run_plan(make_plan(PlanKind.PEERS, RunPlan(), quick=True))
    ys = report.tps()
    flat = all(ys[i + 1] <= ys[i] * 1.05 for i in range(len(ys) - 1))
    ratio = 100 * report.row(16).mean_tps / report.row(1).mean_tps
    ok = [r.variable for r in report.rows] == ["1", "4", "7", "10", "13", "16"] and flat and ratio < 60 and b.ok
    record(6, ok, f"Tps {[round(y, 1) for y in ys]}, Tps(16)/Tps(1) = {ratio:.1f}% {b}")


def test_c7_vm_sweep():
    sender = make_address("c7-sender")

    def run(n):
        return execute(compile_script(make_vm_heavy(n)), sender, {}, 10**7)

    with Budget(120.0) as b:
        steps = {n: run(n).steps_used for n in (1, 10, 100, 1000)}
        slope = (steps[1000] - steps[1]) / 999
        affine = slope == int(slope) and all(steps[n] == steps[1] + slope * (n - 1) for n in steps)
        loc0, loc1 = tuple(run(0).locals[:4]), tuple(run(1).locals[:4])
        report = run_plan(make_plan(PlanKind.VM, RunPlan(), quick=True))
    ys = report.tps()
    decreasing = all(ys[i + 1] < ys[i] for i in range(len(ys) - 1))
    refs = loc0 == (0, 1, 1, 2) == oracles.fib_locals(0) and loc1 == (1, 1, 2, 2) == oracles.fib_locals(1)
    record(
        7,
        affine and decreasing and refs and b.ok,
        f"steps {steps} (slope {slope:g}), Tps {[round(y, 1) for y in ys]}, locals {loc0} {loc1} {b}",
    )


def test_c8_statistics(monkeypatch):
    with Budget(10.0) as b:
        fake = iter([10.0, 20.0])

        def synthetic(plan, seed, rep=0):
            return RunMetrics(next(fake), [], 1.0, 1, 1, 0, repetition=rep, seed=seed)

        with monkeypatch.context() as mp:
            mp.setattr(bn, "run_once", synthetic)
            agg = bn.repeat_and_aggregate(RunPlan(), 2)
        same = bn.repeat_and_aggregate(RunPlan(clients=ClientsConfig(num_clients=12, total_txns=600)), seeds=[9] * 5)
        default_k = bn.repeat_and_aggregate.__defaults__[0]
    ok = (agg.mean_tps, agg.std_tps) == (15.0, 5.0) and same.std_tps == 0.0 and default_k >= 5 and b.ok
    record(8, ok, f"{{10,20}} -> mean {agg.mean_tps} std {agg.std_tps}; same-seed std {same.std_tps}; "
                  f"default k {default_k} {b}")


def test_c9_sweep_determinism(tmp_path, capsys):
    with Budget(360.0) as b:
        codes = [cli_main(["sweep", "peers", "--seed", "7", "--out", str(tmp_path / d)]) for d in ("a", "b")]
    capsys.readouterr()
    a, b_ = ((tmp_path / d / "peers.csv").read_bytes() for d in ("a", "b"))
    ok = codes == [0, 0] and a == b_ and a.count(b"\n") == 7 and b.ok
    record(9, ok, f"exit codes {codes}, {len(a)} bytes, identical={a == b_} {b}")
