"""Command line front end: run scenarios and print reports from an output dir.

Exit codes: 0 completed, 2 scenario errors, 3 internal invariant violations.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .fuzz import fuzz_summary_csv, summarize_fuzz
from .reports import fuzz_records_from_store, power_csv, power_rows, write_outputs
from .runner import DriverKind, InternalInvariantViolation, ScenarioInvalid, run
from .scenario import ScenarioSyntaxError, SchemaError, parse_scenario
from .telemetry import TelemetryStore

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_INTERNAL = 3


def _cmd_run(args) -> int:
    try:
        scenario = parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
    except (OSError, ScenarioSyntaxError, SchemaError) as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    try:
        result = run(scenario, driver=args.driver, seed=args.seed, realtime=args.realtime)
    except ScenarioInvalid as e:
        print("scenario invalid:", file=sys.stderr)
        for v in e.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_SCENARIO
    except InternalInvariantViolation as e:
        print(f"internal invariant violation: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    written = write_outputs(result, args.out)
    print(f"{result.exit.value}: {len(result.store)} records -> {args.out}")
    for name in written:
        print(f"  {name}")
    return EXIT_OK


def _cmd_report(args) -> int:
    outdir = Path(args.dir)
    if args.kind == "packets":
        if not args.link:
            candidates = sorted(outdir.glob("packets_*.csv"))
            if len(candidates) == 1:
                print(candidates[0].read_text(encoding="utf-8"), end="")
                return EXIT_OK
            print("--link required (multiple or no packet logs)", file=sys.stderr)
            return EXIT_SCENARIO
        path = outdir / f"packets_{args.link}.csv"
        if not path.exists():
            print(f"unknown link: {args.link}", file=sys.stderr)
            return EXIT_SCENARIO
        print(path.read_text(encoding="utf-8"), end="")
        return EXIT_OK

    store = TelemetryStore.load_jsonl(outdir / "telemetry.jsonl")
    if args.kind == "power":
        print(power_csv(power_rows(store)), end="")
        return EXIT_OK
    records = fuzz_records_from_store(store)
    if not records:
        print("no fuzz data in this run", file=sys.stderr)
        return EXIT_SCENARIO
    print(fuzz_summary_csv(summarize_fuzz(records)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evector",
        description="EV charging ecosystem simulator with an attack orchestrator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("scenario", help="path to a scenario .scn/.json document")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default="evector_out", help="output directory")
    p_run.add_argument("--driver", choices=[d.value for d in DriverKind],
                       default=DriverKind.LINKED.value)
    p_run.add_argument("--realtime", action="store_true",
                       help="pace the virtual clock against wall time")
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="print a report from a run directory")
    p_rep.add_argument("dir", help="output directory of a previous run")
    p_rep.add_argument("--kind", choices=["packets", "power", "fuzz"], required=True)
    p_rep.add_argument("--link", default=None, help="link id for --kind packets")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
