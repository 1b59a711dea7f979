"""Run the three shipped reference configs end to end.

Usage: python scripts/run_reference_configs.py [--paths N]

Writes each config's CSV/JSON under its configured output directory and
prints the result tables.  Pass --paths to shrink the runs for a quick look.
"""

import argparse
import os
import sys

from memdelta.cli import main as cli_main

CONFIGS = ["configs/bs_call.yaml", "configs/kp_benchmark.yaml", "configs/ahmp_asian.yaml"]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--paths", type=int, default=None)
    args = parser.parse_args()
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    rc = 0
    for cfg in CONFIGS:
        print(f"\n=== {cfg} ===")
        argv = ["run", os.path.join(root, cfg)]
        if args.paths:
            argv += ["--paths", str(args.paths)]
        rc = max(rc, cli_main(argv))
    return rc


if __name__ == "__main__":
    sys.exit(main())
