"""``chainbench`` command line: single runs, sweeps, the ablation, reports, VM debugging."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional, Sequence

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from chainbench import __version__
from chainbench.bench import BenchConfig, ClientsConfig, RunPlan, repeat_and_aggregate
from chainbench.chainnode import ChainConfig, Mode
from chainbench.errors import ChainbenchError, ConfigurationError
from chainbench.experiments import (
    PlanKind,
    Report,
    emit_report,
    load_report,
    make_plan,
    render_csv,
    run_plan,
)
from chainbench.scripts import make_address, script_from_config
from chainbench.vm import compile_script, execute

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_VERDICT = 0, 2, 3, 4

_BENCH_KEYS = {f.name for f in fields(BenchConfig)}
_EXPERIMENT_KEYS = {"repetitions", "values", "quick", "base_seed", "assert_trends"} | _BENCH_KEYS
_REPORT_KEYS = {"out", "formats"}


def load_config(path: Optional[str]) -> dict[str, dict[str, Any]]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError("config", f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError("config", f"invalid TOML in {path}: {exc}") from None
    unknown = set(data) - {"chain", "clients", "experiment", "report"}
    if unknown:
        raise ConfigurationError(sorted(unknown)[0], "unknown config section")
    for section, allowed in (("experiment", _EXPERIMENT_KEYS), ("report", _REPORT_KEYS)):
        extra = set(data.get(section, {})) - allowed
        if extra:
            raise ConfigurationError(sorted(extra)[0], f"unknown [{section}] key")
    return data


class Settings:
    """Config file merged with command-line overrides."""

    def __init__(self, args: argparse.Namespace):
        cfg = load_config(args.config)
        chain_tbl = dict(cfg.get("chain", {}))
        if args.mode is not None:
            chain_tbl["mode"] = args.mode
        chain = ChainConfig.from_mapping(chain_tbl)
        clients = ClientsConfig.from_mapping(cfg.get("clients", {}))
        exp = dict(cfg.get("experiment", {}))
        bench = BenchConfig(**{k: exp[k] for k in _BENCH_KEYS if k in exp}).validate()
        seed = args.seed if args.seed is not None else exp.get("base_seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigurationError("seed", "must be a u64")
        self.base = RunPlan(chain, clients, bench, seed)
        self.repetitions = args.repetitions if args.repetitions is not None else exp.get("repetitions", 5)
        if getattr(args, "quick", None) is not None:
            self.quick = args.quick
        else:
            self.quick = exp.get("quick", True)
        self.values = getattr(args, "values", None) or exp.get("values")
        self.assert_trends = getattr(args, "assert_trends", False) or exp.get("assert_trends", False)
        report = cfg.get("report", {})
        self.out = Path(args.out) if args.out is not None else (Path(report["out"]) if "out" in report else None)
        self.formats = tuple(report.get("formats", ("csv", "json")))


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a u64")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [chain], [clients], [experiment], [report]")
    common.add_argument("--seed", type=_u64, help="base seed; repetition i uses seed + i")
    common.add_argument("--mode", choices=[m.value for m in Mode], help="virtual (default) or wall clock")
    common.add_argument("--repetitions", type=int, help="independent runs per data point (default 5)")
    common.add_argument("--out", help="output directory for CSV/JSON")

    sizing = argparse.ArgumentParser(add_help=False)
    g = sizing.add_mutually_exclusive_group()
    g.add_argument("--quick", dest="quick", action="store_true", default=None, help="2,000 fixed txns (default)")
    g.add_argument("--full", dest="quick", action="store_false", help="10,000 fixed txns")
    sizing.add_argument("--assert-trends", action="store_true", help="exit 4 if a trend verdict fails")

    p = argparse.ArgumentParser(prog="chainbench", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="one configuration, repeated and aggregated")

    sw = sub.add_parser("sweep", parents=[common, sizing], help="workload, peer or VM-complexity sweep")
    sw.add_argument("kind", choices=["workload", "peers", "vm"])
    sw.add_argument("--values", type=_int_list, help="comma-separated values, e.g. 1,4,7")

    sub.add_parser("ablate", parents=[common, sizing], help="the four-row layer ablation")

    rp = sub.add_parser("report", help="re-render a saved JSON report as CSV")
    rp.add_argument("report_json")
    rp.add_argument("--out", help="directory for the regenerated files (default: print CSV)")

    vm = sub.add_parser("vm-exec", help="compile and run one script, print the outcome")
    vm.add_argument("--script", default="vm_heavy", choices=["transfer", "do_nothing", "vm_heavy"])
    vm.add_argument("--iterations", type=int, default=1)
    vm.add_argument("--max-steps", type=int, default=1_000_000)
    vm.add_argument("--locals", action="store_true", help="include final locals")
    return p


def _print_report(report: Report, out=None) -> None:
    out = out or sys.stdout
    print(f"{'variable':>10} {'mean_tps':>12} {'std_tps':>10} {'exec_s':>10} {'committed':>10}", file=out)
    for r in report.rows:
        print(
            f"{r.variable:>10} {r.mean_tps:12.2f} {r.std_tps:10.2f} {r.mean_exec_time_s:10.4f} {r.committed:10d}",
            file=out,
        )
    for v in report.verdicts:
        print(f"verdict {v.name}: {'PASS' if v.passed else 'FAIL'} ({v.detail})", file=out)
    for k, v in report.stats.items():
        print(f"{k}: {json.dumps(v, sort_keys=True)}", file=out)


def _cmd_run(args) -> int:
    s = Settings(args)
    agg = repeat_and_aggregate(s.base, s.repetitions, out_dir=s.out)
    print(f"mean_tps {agg.mean_tps:.2f} std_tps {agg.std_tps:.2f} "
          f"mean_exec_time_s {agg.mean_execution_time:.4f} repetitions {agg.repetitions} seeds {agg.seeds}")
    return EXIT_OK


def _cmd_experiment(args, kind: PlanKind) -> int:
    s = Settings(args)
    plan = make_plan(kind, s.base, values=s.values, repetitions=s.repetitions, quick=s.quick)
    report = run_plan(plan)
    _print_report(report)
    if s.out is not None:
        for path in emit_report(report, s.out, s.formats):
            print(f"wrote {path}")
    if s.assert_trends and not report.trends_ok:
        return EXIT_VERDICT
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        report = load_report(args.report_json)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigurationError("report_json", f"cannot load {args.report_json}: {exc}") from None
    if args.out:
        for path in emit_report(report, args.out):
            print(f"wrote {path}")
    else:
        sys.stdout.write(render_csv(report.rows))
    return EXIT_OK


def _cmd_vm_exec(args) -> int:
    payee = make_address("vm-exec-payee")
    sender = make_address("vm-exec-sender")
    try:
        script = script_from_config({"script": args.script, "iterations": args.iterations, "amount": 1}, payee)
    except ValueError as exc:
        raise ConfigurationError("iterations", str(exc)) from None
    program = compile_script(script)
    outcome = execute(program, sender, {sender: 10, payee: 0}, args.max_steps)
    doc = json.loads(outcome.to_json())
    if args.locals:
        doc["locals"] = list(outcome.locals)
    doc["instructions"] = len(program.instructions)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_experiment(args, {"workload": PlanKind.WORKLOAD, "peers": PlanKind.PEERS, "vm": PlanKind.VM}[args.kind])
        if args.command == "ablate":
            return _cmd_experiment(args, PlanKind.ABLATION)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "vm-exec":
            return _cmd_vm_exec(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChainbenchError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    parser.error(f"unknown command {args.command!r}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
