#!/usr/bin/env python3
"""Uncontrolled bifurcation diagram: three branches, state spectra, mu*.

Writes bifurcation.csv, spectra.csv and diagnostics.json under --out.
"""

import argparse
import sys

from coanda.cli import main as coanda_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/uncontrolled")
    ap.add_argument("--mesh", default="paper")
    args = ap.parse_args()
    import json
    import tempfile

    cfg = {"preset": "uncontrolled", "mesh": args.mesh}
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
        json.dump(cfg, f)
        path = f.name
    return coanda_main(["run", "--config", path, "--out", args.out,
                        "--deterministic"])


if __name__ == "__main__":
    sys.exit(main())
