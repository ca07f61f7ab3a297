"""Generate a sliced truss dataset, train the slice DNN and export the
limit-analysis histogram for several slice counts.

    python scripts/run_slice.py --out runs/slice [--n 20000 --mode full]
"""
import argparse
import sys
from pathlib import Path

from lattice_forge.cli import main


def run(out: Path, n: int, slices: int, mode: str, seed: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    data = out / "slice.jsonl.gz"
    steps = [
        ["generate", "--n", n, "--model", "truss", "--seed", seed, "--slices", slices, "--out", data],
        ["train", "dnn-slice", "--data", data, "--mode", mode, "--seed", seed, "--slices", slices,
         "--out", out / "model", "--progress", 100],
        ["export-plot", "slice-histogram", "--data", data, "--out", out / "histogram.csv"],
        ["export-plot", "pred-scatter", "--ckpt", out / "model" / "model.json", "--data", data,
         "--out", out / "scatter.csv"],
    ]
    for argv in steps:
        code = main([str(x) for x in argv])
        if code:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/slice"))
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--slices", type=int, default=19)
    ap.add_argument("--mode", choices=["desk", "full"], default="desk")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    sys.exit(run(a.out, a.n, a.slices, a.mode, a.seed))
