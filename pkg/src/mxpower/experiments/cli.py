"""``mxpower <command> [--config FILE] [--seed N] [--out DIR] [--replicates R] [--threads K]``."""

from __future__ import annotations

import argparse
import json
import sys
import time

from ..errors import ConfigError
from .config import load_config_file, resolve_config
from .runners import run_experiment

COMMANDS = {
    "calibrate": "calibration",
    "equivalence": "equivalence",
    "power": "power",
    "knockoffs": "knockoffs",
    "amp": "amp",
    "optimality": "optimality",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mxpower", description="Run a simulation experiment.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {kind} experiment")
        p.add_argument("--config", help="flat TOML file of config keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--replicates", type=int)
        p.add_argument("--threads", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    kind = COMMANDS[args.command]
    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides = {"seed": args.seed, "out": args.out, "replicates": args.replicates,
                     "threads": args.threads}
        cfg = resolve_config(kind, file_values, overrides)
    except (ConfigError, OSError) as err:
        print(f"mxpower: {err}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    table = run_experiment(cfg)
    csv_path, meta_path = table.write(cfg.out, wall_time=time.perf_counter() - start)
    print(json.dumps(table.summary, indent=2, default=str))
    print(f"wrote {csv_path} and {meta_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
