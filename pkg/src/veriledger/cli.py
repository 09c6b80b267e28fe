"""Command line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as benchmod
from . import demos
from .chain import jsonable
from .scenario import ScenarioError, bundled, bundled_names, load_scenario, report_bytes, run_scenario, summarize


def _ints(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def _write(out: str | None, data: bytes) -> None:
    if out:
        Path(out).write_bytes(data)


def _dump(obj) -> bytes:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2).encode()


def _demo(fn, args) -> int:
    lines, result = fn(args.seed)
    for line in lines:
        print(line)
    _write(args.out, _dump({"transcript": lines, "result": result}))
    return 0


def cmd_init(args) -> int:
    return _demo(demos.init_demo, args)


def cmd_censor(args) -> int:
    return _demo(demos.censor_demo, args)


def cmd_tamper(args) -> int:
    return _demo(demos.tamper_demo, args)


def cmd_failover(args) -> int:
    return _demo(demos.failover_demo, args)


def cmd_run_scenario(args) -> int:
    try:
        if Path(args.file).exists():
            spec = load_scenario(args.file)
        elif args.file in bundled_names():
            spec = bundled(args.file)
        else:
            print(f"error: no scenario file or bundled scenario named {args.file!r}", file=sys.stderr)
            print(f"bundled: {', '.join(bundled_names())}", file=sys.stderr)
            return 2
        report = run_scenario(spec, args.seed)
    except ScenarioError as exc:
        print(f"error: {args.file}: {exc}", file=sys.stderr)
        return 2
    print(summarize(report))
    _write(args.out, report_bytes(report))
    return 0 if report["passed"] else 1


def cmd_bench(args) -> int:
    rows = benchmod.bench(
        block_sizes=args.block_sizes,
        accounts=args.accounts,
        kind=args.kind,
        runs=args.runs,
        min_txs=args.min_txs,
        seed=args.seed or 0,
    )
    print(benchmod.format_table(rows))
    _write(args.out, _dump([r.to_dict() for r in rows]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness (default: scenario seed or 0)")
    common.add_argument("--out", metavar="FILE", help="write the machine-readable result to FILE")

    p = argparse.ArgumentParser(prog="veriledger", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("init", parents=[common], help="deploy a fresh stack and attest it").set_defaults(fn=cmd_init)

    rs = sub.add_parser("run-scenario", parents=[common], help="run a JSON scenario file or a bundled scenario name")
    rs.add_argument("file")
    rs.set_defaults(fn=cmd_run_scenario)

    b = sub.add_parser("bench", parents=[common], help="measure block throughput")
    b.add_argument("--block-sizes", type=_ints, default=list(benchmod.DEFAULT_BLOCK_SIZES))
    b.add_argument("--accounts", type=_ints, default=list(benchmod.DEFAULT_ACCOUNTS))
    b.add_argument("--kind", choices=benchmod.KINDS, default=benchmod.PAYMENT)
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--min-txs", type=int, default=200, help="transactions per run for small block sizes")
    b.set_defaults(fn=cmd_bench)

    sub.add_parser("censor-demo", parents=[common], help="censorship escalation walkthrough").set_defaults(fn=cmd_censor)
    sub.add_parser("tamper-demo", parents=[common], help="tampered receipt detection walkthrough").set_defaults(fn=cmd_tamper)
    sub.add_parser("failover-demo", parents=[common], help="enclave failure and recovery walkthrough").set_defaults(fn=cmd_failover)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "run-scenario" and args.seed is None:
        args.seed = 0
    return args.fn(args)
