"""Experiment sweeps, the layer-ablation matrix, trend verdicts and report files."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from chainbench.bench import (
    DEFAULT_REPETITIONS,
    AggregateMetrics,
    RunPlan,
    repeat_and_aggregate,
)
from chainbench.chainnode import Mode
from chainbench.errors import ConfigurationError

QUICK_TXNS = 2000
FULL_TXNS = 10_000
WORKLOAD_VALUES = (1000, 3000, 5000, 7000, 10_000)
PEER_VALUES = (1, 4, 7, 10, 13, 16)
VM_VALUES = (1, 10, 100, 1000)
WALL_TOLERANCE = 0.05
PEER_SWEEP_TOLERANCE = 0.05

# Published Tps of the four layer combinations, kept as a context column.
ABLATION_REFERENCE = {"on/on": 643.82, "on/off": 1030.7, "off/on": 744.22, "off/off": 1348.68}
PEER_RATIO_REFERENCE = 33.9

CSV_HEADER = ("plan", "variable", "mean_tps", "std_tps", "mean_exec_time_s", "committed", "aborted", "seed_set")


class PlanKind(str, enum.Enum):
    WORKLOAD = "workload"
    PEERS = "peers"
    VM = "vm"
    ABLATION = "ablation"


@dataclass(frozen=True)
class AblationRow:
    execution_layer: bool
    consensus_layer: bool

    @property
    def label(self) -> str:
        on = {True: "on", False: "off"}
        return f"{on[self.execution_layer]}/{on[self.consensus_layer]}"

    @property
    def script(self) -> str:
        return "transfer" if self.execution_layer else "do_nothing"

    @property
    def peers(self) -> int:
        return 4 if self.consensus_layer else 1


ABLATION_ROWS = (
    AblationRow(True, True),
    AblationRow(True, False),
    AblationRow(False, True),
    AblationRow(False, False),
)


@dataclass(frozen=True)
class ExperimentPlan:
    kind: PlanKind
    values: tuple
    base: RunPlan = field(default_factory=RunPlan)
    repetitions: int = DEFAULT_REPETITIONS

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PlanKind(self.kind))
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ConfigurationError("values", "a plan needs at least one value")
        if not isinstance(self.repetitions, int) or self.repetitions < 1:
            raise ConfigurationError("repetitions", "must be an integer >= 1")
        if self.kind is PlanKind.ABLATION:
            if sorted(self.values, key=lambda r: r.label) != sorted(ABLATION_ROWS, key=lambda r: r.label):
                raise ConfigurationError("values", "an ablation covers exactly the four on/off combinations")
        else:
            for v in self.values:
                if not isinstance(v, int) or isinstance(v, bool):
                    raise ConfigurationError("values", f"sweep values must be integers, got {v!r}")
                if v < (0 if self.kind is PlanKind.VM else 1):
                    raise ConfigurationError("values", f"value {v} out of range for a {self.kind.value} sweep")

    @property
    def seeds(self) -> list[int]:
        return [self.base.base_seed + i for i in range(self.repetitions)]

    def row_plan(self, value) -> RunPlan:
        base = self.base
        if self.kind is PlanKind.WORKLOAD:
            return base.with_chain(num_validators=4).with_clients(script="transfer", total_txns=value)
        if self.kind is PlanKind.PEERS:
            return base.with_chain(num_validators=value).with_clients(script="transfer")
        if self.kind is PlanKind.VM:
            return base.with_chain(num_validators=4).with_clients(script="vm_heavy", iterations=value)
        return base.with_chain(num_validators=value.peers).with_clients(script=value.script)


@dataclass
class ReportRow:
    plan: str
    variable: str
    mean_tps: float
    std_tps: float
    mean_exec_time_s: float
    committed: int
    aborted: int
    seed_set: tuple
    metadata: dict = field(default_factory=dict)

    def csv_fields(self) -> list[str]:
        return [
            self.plan,
            self.variable,
            f"{self.mean_tps:.6f}",
            f"{self.std_tps:.6f}",
            f"{self.mean_exec_time_s:.9f}",
            str(self.committed),
            str(self.aborted),
            ";".join(str(s) for s in self.seed_set),
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed_set"] = list(self.seed_set)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReportRow":
        d = dict(d)
        d["seed_set"] = tuple(d["seed_set"])
        return cls(**d)


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Report:
    kind: PlanKind
    rows: list[ReportRow]
    verdicts: list[Verdict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def trends_ok(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def tps(self) -> list[float]:
        return [r.mean_tps for r in self.rows]

    def row(self, variable) -> ReportRow:
        for r in self.rows:
            if r.variable == str(variable):
                return r
        raise KeyError(variable)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "rows": [r.to_dict() for r in self.rows],
            "verdicts": [asdict(v) for v in self.verdicts],
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(
            PlanKind(d["kind"]),
            [ReportRow.from_dict(r) for r in d["rows"]],
            [Verdict(**v) for v in d.get("verdicts", [])],
            d.get("stats", {}),
        )


def config_hash(plan: RunPlan) -> str:
    blob = json.dumps(plan.to_dict(), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _row(kind: PlanKind, variable: str, plan: RunPlan, agg: AggregateMetrics) -> ReportRow:
    c = plan.clients
    meta = {
        "mode": Mode(plan.chain.mode).value,
        "consensus": plan.chain.to_dict()["consensus"],
        "num_validators": plan.chain.num_validators,
        "gateway": plan.chain.gateway,
        "num_clients": c.num_clients,
        "total_txns": c.total_txns,
        "script": c.script,
        "iterations": c.iterations,
        "warmup_fraction": c.warmup_fraction,
        "min_warmup": c.min_warmup,
        "std": "population",
        "repetitions": agg.repetitions,
        "config_hash": config_hash(plan),
    }
    return ReportRow(
        plan=kind.value,
        variable=variable,
        mean_tps=agg.mean_tps,
        std_tps=agg.std_tps,
        mean_exec_time_s=agg.mean_execution_time,
        committed=agg.committed,
        aborted=agg.aborted,
        seed_set=tuple(agg.seeds),
        metadata=meta,
    )


def _run_rows(plan: ExperimentPlan, out_dir: Optional[Path] = None) -> list[ReportRow]:
    rows = []
    for value in plan.values:
        rp = plan.row_plan(value)
        agg = repeat_and_aggregate(rp, plan.repetitions, out_dir=out_dir)
        variable = value.label if isinstance(value, AblationRow) else str(value)
        rows.append(_row(plan.kind, variable, rp, agg))
    return rows


def _tolerance(plan: ExperimentPlan) -> float:
    return 0.0 if Mode(plan.base.chain.mode) is Mode.VIRTUAL else WALL_TOLERANCE


# --- trend checks -------------------------------------------------------------


def rises_then_falls(ys: Sequence[float], tol: float = 0.0) -> bool:
    """An interior peak, climbing to it and declining after it (adjacent steps within ``tol``)."""
    if len(ys) < 3:
        return False
    k = max(range(len(ys)), key=lambda i: ys[i])
    if k in (0, len(ys) - 1):
        return False
    up = all(ys[i + 1] >= ys[i] * (1 - tol) for i in range(k))
    down = all(ys[i + 1] <= ys[i] * (1 + tol) for i in range(k, len(ys) - 1))
    return up and down and ys[-1] < ys[k]


def non_increasing(ys: Sequence[float], tol: float = 0.0) -> bool:
    return all(ys[i + 1] <= ys[i] * (1 + tol) for i in range(len(ys) - 1))


def strictly_decreasing(ys: Sequence[float], tol: float = 0.0) -> bool:
    if tol == 0.0:
        return all(ys[i + 1] < ys[i] for i in range(len(ys) - 1))
    return all(ys[i + 1] < ys[i] * (1 + tol) for i in range(len(ys) - 1))


def ablation_verdicts(tps: dict[str, float]) -> list[Verdict]:
    on_on, on_off, off_on, off_off = (tps[k] for k in ("on/on", "on/off", "off/on", "off/off"))
    consensus_impact = off_off - off_on
    execution_impact = off_off - on_off
    return [
        Verdict("exec-off-beats-exec-on", off_off > on_off, f"{off_off:.2f} > {on_off:.2f}"),
        Verdict("cons-off-beats-cons-on", off_off > off_on, f"{off_off:.2f} > {off_on:.2f}"),
        Verdict("all-on-is-minimum", on_on == min(tps.values()), f"on/on = {on_on:.2f}"),
        Verdict(
            "consensus-is-bottleneck",
            consensus_impact > execution_impact,
            f"consensus impact {consensus_impact:.2f} vs execution impact {execution_impact:.2f}",
        ),
    ]


# --- sweeps -------------------------------------------------------------------


def run_workload_sweep(plan: ExperimentPlan, out_dir: Optional[Path] = None) -> Report:
    rows = _run_rows(plan, out_dir)
    report = Report(PlanKind.WORKLOAD, rows)
    if len(rows) >= 3:
        ys = report.tps()
        report.verdicts.append(Verdict("rise-then-fall", rises_then_falls(ys, _tolerance(plan)), _fmt(ys)))
    return report


def run_peer_sweep(plan: ExperimentPlan, out_dir: Optional[Path] = None) -> Report:
    rows = _run_rows(plan, out_dir)
    report = Report(PlanKind.PEERS, rows)
    ys = report.tps()
    if len(rows) >= 2:
        report.verdicts.append(Verdict("non-increasing", non_increasing(ys, PEER_SWEEP_TOLERANCE), _fmt(ys)))
    values = list(plan.values)
    if 1 in values and len(values) > 1:
        top = max(values)
        ratio = 100.0 * report.row(top).mean_tps / report.row(1).mean_tps
        report.stats["peer_ratio"] = {
            "numerator_peers": top,
            "percent": ratio,
            "reference_percent": PEER_RATIO_REFERENCE,
        }
        report.verdicts.append(Verdict("ratio-below-60pct", ratio < 60.0, f"Tps({top})/Tps(1) = {ratio:.2f}%"))
    return report


def run_vm_sweep(plan: ExperimentPlan, out_dir: Optional[Path] = None) -> Report:
    rows = _run_rows(plan, out_dir)
    report = Report(PlanKind.VM, rows)
    ys = report.tps()
    if len(rows) >= 2:
        report.verdicts.append(Verdict("strictly-decreasing", strictly_decreasing(ys, _tolerance(plan)), _fmt(ys)))
    values = list(plan.values)
    if 1 in values and 1000 in values:
        t1, t1000 = report.row(1).mean_tps, report.row(1000).mean_tps
        report.verdicts.append(
            Verdict("sublinear-slowdown", t1000 > t1 / 100, f"Tps(1000) = {t1000:.2f} vs Tps(1)/100 = {t1 / 100:.2f}")
        )
    return report


def run_ablation(plan: ExperimentPlan, out_dir: Optional[Path] = None) -> Report:
    order = {r.label: i for i, r in enumerate(ABLATION_ROWS)}
    plan = replace(plan, values=tuple(sorted(plan.values, key=lambda r: order[r.label])))
    rows = _run_rows(plan, out_dir)
    for r in rows:
        r.metadata["reference_tps"] = ABLATION_REFERENCE[r.variable]
    report = Report(PlanKind.ABLATION, rows)
    tps = {r.variable: r.mean_tps for r in rows}
    report.verdicts.extend(ablation_verdicts(tps))
    report.stats["layer_impact"] = {
        "consensus": tps["off/off"] - tps["off/on"],
        "execution": tps["off/off"] - tps["on/off"],
    }
    return report


RUNNERS = {
    PlanKind.WORKLOAD: run_workload_sweep,
    PlanKind.PEERS: run_peer_sweep,
    PlanKind.VM: run_vm_sweep,
    PlanKind.ABLATION: run_ablation,
}


def default_values(kind: PlanKind) -> tuple:
    return {
        PlanKind.WORKLOAD: WORKLOAD_VALUES,
        PlanKind.PEERS: PEER_VALUES,
        PlanKind.VM: VM_VALUES,
        PlanKind.ABLATION: ABLATION_ROWS,
    }[PlanKind(kind)]


def make_plan(kind, base: RunPlan, *, values=None, repetitions: int = DEFAULT_REPETITIONS,
              quick: bool = True) -> ExperimentPlan:
    """Plan with default values; the fixed txn count is 2,000 (quick) or 10,000 (full)."""
    kind = PlanKind(kind)
    if kind is not PlanKind.WORKLOAD:
        base = replace(base, clients=replace(base.clients, total_txns=QUICK_TXNS if quick else FULL_TXNS))
    return ExperimentPlan(kind, tuple(values) if values is not None else default_values(kind), base, repetitions)


def run_plan(plan: ExperimentPlan, out_dir: Optional[Path] = None) -> Report:
    return RUNNERS[plan.kind](plan, out_dir)


def _fmt(ys: Sequence[float]) -> str:
    return ", ".join(f"{y:.2f}" for y in ys)


# --- report files -------------------------------------------------------------


def render_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def render_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def emit_report(report: Report, out_dir, formats: Sequence[str] = ("csv", "json"), stem: Optional[str] = None) -> list[Path]:
    if not report.rows:
        raise ConfigurationError("rows", "cannot emit an empty report")
    stem = stem or report.kind.value
    out = Path(out_dir)
    paths = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            if fmt == "csv":
                text = render_csv(report.rows)
            elif fmt == "json":
                text = render_json(report)
            else:
                raise ConfigurationError("format", f"unknown report format {fmt!r}")
            path = out / f"{stem}.{fmt}"
            with open(path, "w", newline="") as fh:
                fh.write(text)
            paths.append(path)
    except OSError as exc:
        raise ConfigurationError("out", f"cannot write report to {out}: {exc}") from exc
    return paths


def load_report(path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))


def read_csv_rows(path) -> list[dict[str, Any]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
