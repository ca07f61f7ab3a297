"""Build a surrogate database from a trained graph model, extract the
stiffness/lightness Pareto front and query a stiffness band.

    python scripts/run_inverse.py --ckpt runs/gnn-truss/model/model.json --target-mpa 170
"""
import argparse
import sys
from pathlib import Path

from lattice_forge.cli import main


def run(ckpt: Path, out: Path, n: int, target: float, band: float, seed: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    code = main(["inverse", "--model-ckpt", str(ckpt), "--n", str(n), "--target-mpa", str(target),
                 "--band-mpa", str(band), "--validate", "--seed", str(seed), "--out", str(out / "database.csv")])
    # an empty band (exit 3) still leaves the database worth plotting
    plot = main(["export-plot", "pareto", "--ckpt", str(ckpt), "--n", str(n), "--seed", str(seed),
                 "--out", str(out / "pareto.csv")])
    return code or plot


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("runs/inverse"))
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--target-mpa", type=float, default=170.0)
    ap.add_argument("--band-mpa", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    sys.exit(run(a.ckpt, a.out, a.n, a.target_mpa, a.band_mpa, a.seed))
