import json
from dataclasses import replace

import pytest

from chainbench import experiments as ex
from chainbench.bench import ClientsConfig, RunPlan
from chainbench.errors import ConfigurationError
from chainbench.experiments import ABLATION_ROWS, AblationRow, ExperimentPlan, PlanKind, Report, ReportRow

TINY = RunPlan(clients=ClientsConfig(num_clients=4, total_txns=120))


def tiny_plan(kind, values=None, reps=2):
    plan = ex.make_plan(kind, TINY, values=values, repetitions=reps)
    # keep the desk-scale fixed workload out of unit tests
    return replace(plan, base=replace(plan.base, clients=TINY.clients))


@pytest.fixture(scope="module")
def peer_report():
    return ex.run_plan(tiny_plan(PlanKind.PEERS))


def test_ablation_rows_are_exhaustive():
    assert len(ABLATION_ROWS) == 4
    assert {(r.execution_layer, r.consensus_layer) for r in ABLATION_ROWS} == {
        (True, True), (True, False), (False, True), (False, False)
    }
    assert [r.label for r in ABLATION_ROWS] == ["on/on", "on/off", "off/on", "off/off"]
    mapping = {r.label: (r.script, r.peers) for r in ABLATION_ROWS}
    assert mapping == {
        "on/on": ("transfer", 4),
        "on/off": ("transfer", 1),
        "off/on": ("do_nothing", 4),
        "off/off": ("do_nothing", 1),
    }


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        ExperimentPlan(PlanKind.PEERS, ())
    with pytest.raises(ConfigurationError):
        ExperimentPlan(PlanKind.PEERS, (1, 4), repetitions=0)
    with pytest.raises(ConfigurationError):
        ExperimentPlan(PlanKind.PEERS, (0,))
    with pytest.raises(ConfigurationError):
        ExperimentPlan(PlanKind.ABLATION, ABLATION_ROWS[:3])
    assert ExperimentPlan(PlanKind.VM, (0,)).values == (0,)


def test_default_values_and_sizes():
    assert ex.default_values(PlanKind.WORKLOAD) == (1000, 3000, 5000, 7000, 10000)
    assert ex.default_values(PlanKind.PEERS) == (1, 4, 7, 10, 13, 16)
    assert ex.default_values(PlanKind.VM) == (1, 10, 100, 1000)
    assert ex.make_plan(PlanKind.PEERS, RunPlan()).base.clients.total_txns == 2000
    assert ex.make_plan(PlanKind.PEERS, RunPlan(), quick=False).base.clients.total_txns == 10_000
    assert ex.make_plan(PlanKind.PEERS, RunPlan()).repetitions == 5


def test_row_plans_follow_the_mapping():
    vm = ExperimentPlan(PlanKind.VM, (10,))
    rp = vm.row_plan(10)
    assert (rp.chain.num_validators, rp.clients.script, rp.clients.iterations) == (4, "vm_heavy", 10)
    wl = ExperimentPlan(PlanKind.WORKLOAD, (3000,)).row_plan(3000)
    assert (wl.chain.num_validators, wl.clients.total_txns, wl.clients.script) == (4, 3000, "transfer")
    ab = ExperimentPlan(PlanKind.ABLATION, ABLATION_ROWS).row_plan(AblationRow(False, True))
    assert (ab.chain.num_validators, ab.clients.script) == (4, "do_nothing")


def test_peer_sweep_rows_and_ratio(peer_report, tmp_path):
    r = peer_report
    assert [row.variable for row in r.rows] == ["1", "4", "7", "10", "13", "16"]
    assert r.stats["peer_ratio"]["percent"] == pytest.approx(100 * r.tps()[-1] / r.tps()[0])
    assert r.stats["peer_ratio"]["reference_percent"] == 33.9
    for row in r.rows:
        assert row.seed_set == (0, 1)
        assert len(row.metadata["config_hash"]) == 16
        assert row.metadata["gateway"] == 0 and row.metadata["std"] == "population"
    (csv_path,) = ex.emit_report(r, tmp_path, ("csv",))
    lines = csv_path.read_text().splitlines()
    assert lines[0] == ",".join(ex.CSV_HEADER)
    assert len(lines) == 7


def test_json_round_trip(peer_report, tmp_path):
    paths = ex.emit_report(peer_report, tmp_path)
    back = ex.load_report(tmp_path / "peers.json")
    assert back.rows == peer_report.rows
    assert back.verdicts == peer_report.verdicts
    assert ex.render_csv(back.rows) == ex.render_csv(peer_report.rows)
    assert len(paths) == 2
    assert ex.read_csv_rows(tmp_path / "peers.csv")[0]["seed_set"] == "0;1"


def test_identical_seeds_identical_csv():
    a = ex.run_plan(tiny_plan(PlanKind.PEERS, (1, 4), reps=1))
    b = ex.run_plan(tiny_plan(PlanKind.PEERS, (1, 4), reps=1))
    assert ex.render_csv(a.rows) == ex.render_csv(b.rows)


def test_single_peer_value_has_no_ratio():
    r = ex.run_plan(tiny_plan(PlanKind.PEERS, (1,), reps=1))
    assert len(r.rows) == 1 and "peer_ratio" not in r.stats
    assert not any(v.name == "ratio-below-60pct" for v in r.verdicts)


def test_single_workload_value():
    r = ex.run_plan(ExperimentPlan(PlanKind.WORKLOAD, (1000,), TINY, 1))
    assert len(r.rows) == 1 and r.rows[0].committed == 1000


def test_loop_free_vm_sweep():
    r = ex.run_plan(tiny_plan(PlanKind.VM, (0,), reps=1))
    assert r.rows[0].variable == "0" and r.rows[0].mean_tps > 0


def test_ablation_report_carries_reference_column():
    r = ex.run_plan(tiny_plan(PlanKind.ABLATION, ABLATION_ROWS[::-1], reps=1))
    assert [row.variable for row in r.rows] == ["on/on", "on/off", "off/on", "off/off"]
    assert [row.metadata["reference_tps"] for row in r.rows] == [643.82, 1030.7, 744.22, 1348.68]
    assert {v.name for v in r.verdicts} == {
        "exec-off-beats-exec-on", "cons-off-beats-cons-on", "all-on-is-minimum", "consensus-is-bottleneck"
    }


def test_trend_helpers():
    assert ex.rises_then_falls([1, 3, 2])
    assert not ex.rises_then_falls([1, 2, 3])
    assert not ex.rises_then_falls([3, 2, 1])
    assert ex.rises_then_falls([1, 3, 3.1, 2], tol=0.05)
    assert ex.non_increasing([5, 4, 4])
    assert not ex.non_increasing([5, 5.1])
    assert ex.non_increasing([5, 5.1], tol=0.05)
    assert ex.strictly_decreasing([3, 2, 1])
    assert not ex.strictly_decreasing([3, 3])


def test_ablation_verdict_logic():
    vs = {v.name: v.passed for v in ex.ablation_verdicts({"on/on": 1, "on/off": 3, "off/on": 2, "off/off": 4})}
    assert vs == {
        "exec-off-beats-exec-on": True,
        "cons-off-beats-cons-on": True,
        "all-on-is-minimum": True,
        "consensus-is-bottleneck": True,
    }
    vs = {v.name: v.passed for v in ex.ablation_verdicts({"on/on": 1, "on/off": 2, "off/on": 3, "off/off": 4})}
    assert vs["consensus-is-bottleneck"] is False


def test_emit_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        ex.emit_report(Report(PlanKind.PEERS, []), tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    row = ReportRow("peers", "1", 1.0, 0.0, 1.0, 1, 0, (0,))
    with pytest.raises(ConfigurationError) as err:
        ex.emit_report(Report(PlanKind.PEERS, [row]), blocker / "sub")
    assert err.value.field == "out"


def test_report_row_dict_round_trip():
    row = ReportRow("vm", "10", 1.5, 0.25, 2.0, 10, 1, (3, 4), {"mode": "virtual"})
    assert ReportRow.from_dict(json.loads(json.dumps(row.to_dict()))) == row
    assert row.csv_fields()[-1] == "3;4"
