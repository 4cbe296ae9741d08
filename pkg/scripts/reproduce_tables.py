"""Regenerate every result table from the bundled fixtures.

Writes into the output directory (default ``results/``):

    run/aggregate.csv        per-task cost and quality, adaptive mode, alpha=1
    stats/fallback.csv       fast/slow split and fallback reasons per subtask kind
    sweep/pareto.csv         mean cost and quality per alpha, slow vs adaptive
    learn/learning_curve.csv held-out metrics after each refinement cycle

Every step goes through the ``toolpath`` CLI, so a second run with the same
seed yields byte-identical files.

Run: python scripts/reproduce_tables.py [--out results] [--seed 42]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from toolpath.cli import EXIT_OK
from toolpath.cli import main as cli


def steps(seed: str) -> list[tuple[str, list[str]]]:
    common = ["--seed", seed]
    return [
        ("run", ["run", "--mode", "adaptive", *common]),
        ("stats", ["stats", "--mode", "adaptive", *common]),
        ("sweep", ["sweep-alpha", "--modes", "slow,adaptive", *common]),
        ("learn", ["learn", *common]),
    ]


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args(argv)
    out = Path(args.out)
    for name, cmd in steps(str(args.seed)):
        code = cli([*cmd, "--out", str(out / name)])
        print(f"{name:6s} exit={code} -> {out / name}")
        if code != EXIT_OK:
            return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
