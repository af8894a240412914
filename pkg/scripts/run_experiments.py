"""Run every shipped configuration through the CLI and collect the outputs.

Usage: python scripts/run_experiments.py [--out results] [--threads 8] [--only decay_iso_d4 ...]
"""

import argparse
import sys
from pathlib import Path

from emcbo.cli import main as emcbo

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

JOBS = [
    ("plan", "plan_worked"),
    ("check", "check_sphere"),
    ("run", "run_sphere"),
    ("decay", "decay_iso_d4"),
    ("decay", "decay_aniso_d4"),
    ("decay", "decay_aniso_d16"),
    ("rate-dt", "rate_dt"),
    ("rate-dt", "rate_dt_sigma0"),
    ("rate-n", "rate_n"),
    ("budget", "plan_worked"),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--only", nargs="*", help="config names to run")
    args = ap.parse_args()
    status = 0
    for command, name in JOBS:
        if args.only and name not in args.only:
            continue
        out = Path(args.out) / f"{command}-{name}"
        argv = [command, "-c", str(CONFIGS / f"{name}.yaml"), "-o", str(out)]
        if args.threads:
            argv += ["--threads", str(args.threads)]
        print(f"== {command} {name} -> {out}", flush=True)
        code = emcbo(argv)
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
