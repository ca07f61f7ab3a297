"""Generate training and hidden-test lattices and train the graph surrogate.

    python scripts/run_gnn.py --kind truss --out runs/gnn-truss
    python scripts/run_gnn.py --kind beam --n 20000 --test-n 2000 --mode full
"""
import argparse
import sys
from pathlib import Path

from lattice_forge.cli import main


def run(out: Path, kind: str, n: int, test_n: int, mode: str, seed: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    train, test = out / "train.jsonl.gz", out / "test.jsonl.gz"
    steps = [
        ["generate", "--n", n, "--model", kind, "--seed", seed, "--out", train],
        ["generate", "--n", test_n, "--model", kind, "--seed", seed, "--stream", "test", "--out", test],
        ["train", "gnn", "--data", train, "--test-data", test, "--mode", mode, "--seed", seed,
         "--out", out / "model", "--progress", 50],
        ["export-plot", "pred-scatter", "--ckpt", out / "model" / "model.json", "--data", test,
         "--split-name", "test", "--out", out / "test_scatter.csv"],
    ]
    for argv in steps:
        code = main([str(x) for x in argv])
        if code:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path)
    ap.add_argument("--kind", choices=["truss", "beam"], default="truss")
    ap.add_argument("--n", type=int, default=4600)
    ap.add_argument("--test-n", type=int, default=400)
    ap.add_argument("--mode", choices=["desk", "full"], default="desk")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    sys.exit(run(a.out or Path(f"runs/gnn-{a.kind}"), a.kind, a.n, a.test_n, a.mode, a.seed))
