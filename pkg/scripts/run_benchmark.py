"""Train a benchmark config, re-certify the result and simulate from the boundary.

    python3 scripts/run_benchmark.py configs/segway.json
    python3 scripts/run_benchmark.py configs/platoon_N4.json --out runs/p4

Outputs land in ``<out>/train``, ``<out>/certify`` and ``<out>/simulate``.
"""

import argparse
import json
import sys
from pathlib import Path

from polycert.cli import main as cli


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config", type=Path)
    ap.add_argument("--out", type=Path, default=None, help="defaults to the config's output_dir")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)

    raw = json.loads(args.config.read_text())
    out = args.out or (args.config.parent / raw.get("output_dir", "../runs/" + args.config.stem)).resolve()
    seed = [] if args.seed is None else ["--seed", str(args.seed)]

    status = cli(["train", "--config", str(args.config), "--out", str(out / "train"), *seed])
    if status != 0:
        print(f"training did not certify (exit {status})", file=sys.stderr)
        return status
    # trained_config.json points at network.json relative to itself
    trained = str(out / "train" / "trained_config.json")
    status = cli(["certify", "--config", trained, "--out", str(out / "certify")])
    if status != 0:
        return status
    return cli(["simulate", "--config", trained, "--out", str(out / "simulate"), *seed])


if __name__ == "__main__":
    sys.exit(main())
