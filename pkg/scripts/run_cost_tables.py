#!/usr/bin/env python3
"""Reproduce a cost-functional table: J(mu, alpha) along both branches.

Example:
    python scripts/run_cost_tables.py --preset table-neumann --out out/neumann
"""

import argparse
import json
import sys
import tempfile

from coanda.cli import main as coanda_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="table-neumann",
                    choices=["table-neumann", "neumann", "distributed-sym",
                             "distributed-asym", "channel", "dirichlet"])
    ap.add_argument("--out", default="out/table")
    ap.add_argument("--mesh", default="paper")
    ap.add_argument("--points", type=int, default=31)
    args = ap.parse_args()
    cfg = {"preset": args.preset, "mesh": args.mesh,
           "mu_grid": {"start": 2.0, "stop": 0.5, "count": args.points}}
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
        json.dump(cfg, f)
        path = f.name
    return coanda_main(["run", "--config", path, "--out", args.out,
                        "--deterministic"])


if __name__ == "__main__":
    sys.exit(main())
