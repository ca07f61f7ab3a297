"""Train the spring-series toy DNN and export its scatter data.

    python scripts/run_toy.py --out runs/toy [--mode full]
"""
import argparse
import sys
from pathlib import Path

from lattice_forge.cli import main


def run(out: Path, mode: str, seed: int) -> int:
    code = main(["train", "dnn-toy", "--mode", mode, "--seed", str(seed), "--out", str(out), "--progress", "100"])
    if code:
        return code
    return main(["export-plot", "toy-scatter", "--ckpt", str(out / "model.json"), "--out", str(out / "scatter.csv")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/toy"))
    ap.add_argument("--mode", choices=["desk", "full"], default="desk")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    sys.exit(run(a.out, a.mode, a.seed))
