#!/usr/bin/env python3
"""Offline/online reduced-order study for one control configuration.

Produces snapshots/, basis.npz, rom_errors.csv and rom_errors_mu.csv.
"""

import argparse
import json
import sys
import tempfile

from coanda.cli import main as coanda_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", default="neumann",
                    choices=["neumann", "distributed", "channel", "dirichlet"])
    ap.add_argument("--alpha", type=float, default=0.01)
    ap.add_argument("--target", default="symmetric",
                    choices=["symmetric", "asymmetric"])
    ap.add_argument("--n-max", type=int, default=51)
    ap.add_argument("--n-bar", type=int, default=None,
                    help="basis size (default 20; 12 for dirichlet)")
    ap.add_argument("--online", type=int, default=151)
    ap.add_argument("--mesh", default="paper")
    ap.add_argument("--out", default="out/rom")
    args = ap.parse_args()
    n_bar = args.n_bar or (12 if args.kind == "dirichlet" else 20)
    cfg = {"mesh": args.mesh, "system": "ocp",
           "control": {"kind": args.kind, "alpha_list": [args.alpha],
                       "target": args.target},
           "mu_grid": {"start": 2.0, "stop": 0.5, "count": args.n_max},
           "branches": ["natural"],
           "rom": {"n_max": args.n_max, "n_bar": n_bar,
                   "online_count": args.online}}
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
        json.dump(cfg, f)
        path = f.name
    return coanda_main(["rom-online", "--config", path, "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
