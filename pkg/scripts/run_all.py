"""Run every experiment with its bundled config and write results under ``results/``.

    python3 scripts/run_all.py [--out results] [--threads 1]
"""

import argparse
from pathlib import Path

from mxpower.experiments.cli import main

HERE = Path(__file__).parent
RUNS = [
    ("calibrate", None),
    ("calibrate", "calibration_sweep.toml"),
    ("calibrate", "gaussian_exact.toml"),
    ("equivalence", None),
    ("equivalence", "equivalence_n25.toml"),
    ("power", None),
    ("power", "power_synthetic_err1.toml"),
    ("power", "power_lasso.toml"),
    ("amp", "amp_check.toml"),
    ("knockoffs", None),
    ("knockoffs", "knockoffs_null.toml"),
    ("optimality", None),
]


def run(out, threads):
    for command, config in RUNS:
        name = Path(config).stem if config else command
        argv = [command, "--out", str(Path(out) / name), "--threads", str(threads)]
        if config:
            argv += ["--config", str(HERE / "configs" / config)]
        print(f"== {command} {config or '(defaults)'}")
        if main(argv) != 0:
            raise SystemExit(f"{command} failed")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="results")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    run(args.out, args.threads)
