"""Command-line scenario runner.

    awgsim --scenario paper-iii-a --out ./out
    awgsim --scenario my.scenario --transport tcp --listen 127.0.0.1:0
    awgsim --scenario probe.scenario --transport tcp --connect 10.0.0.5:5025

Exit codes: 0 all suites pass, 1 a suite failed, 2 configuration or
connection error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, TransportError
from .scenario import bundled_scenario_path, parse_scenario, run_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awgsim",
        description="Run a measurement scenario against simulated AWG boards.")
    parser.add_argument("--scenario", required=True,
                        help="scenario file path, or a bundled scenario name "
                             "(paper-iii-a, paper-iii-b, paper-iii-c, "
                             "paper-iii-d, seamless, determinism)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario's random seed")
    parser.add_argument("--out", default="./awgsim-out",
                        help="report output directory")
    parser.add_argument("--transport", choices=["loopback", "tcp"],
                        default="loopback")
    parser.add_argument("--listen", default=None, metavar="HOST:PORT",
                        help="tcp transport: serve boards on real sockets "
                             "(port 0 = ephemeral; board N uses PORT+N)")
    parser.add_argument("--connect", default=None, metavar="HOST:PORT",
                        help="tcp transport: drive one existing board server")
    parser.add_argument("--emit", choices=["csv", "summary", "both"],
                        default="both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = args.scenario
        if not os.path.exists(path) and "/" not in path and "\\" not in path:
            path = bundled_scenario_path(path.removesuffix(".scenario"))
        scenario = parse_scenario(path)
        if args.connect and args.transport != "tcp":
            raise ConfigError("--connect requires --transport tcp")
        result = run_scenario(scenario, args.out, transport=args.transport,
                              listen=args.listen, connect=args.connect,
                              emit=args.emit, seed=args.seed)
    except (ConfigError, TransportError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    for suite in result.suites:
        print(f"{suite.name}: {'PASS' if suite.passed else 'FAIL'}")
    print(f"scenario {result.name}: {'PASS' if result.passed else 'FAIL'} "
          f"(reports in {result.out_dir})")
    return 0 if result.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
