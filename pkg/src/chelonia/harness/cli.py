"""``harness run <scenario> [--seed N] [--out dir]``"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .runners import run_scenario
from .scenario import builtin_names, load_scenario


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="harness", description="Run simulation scenarios.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario (bundled name or INI path)")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default="harness-out")
    sub.add_parser("list", help="list bundled scenarios")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "list":
        print("\n".join(builtin_names()))
        return 0
    try:
        scenario = load_scenario(args.scenario)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"harness: {exc}", file=sys.stderr)
        return 2
    result = run_scenario(scenario, args.seed)
    for path in result.write(args.out):
        print(f"wrote {path}")
    print(json.dumps(result.to_dict()["checks"], indent=2, sort_keys=True))
    print(f"{result.name}: {'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
