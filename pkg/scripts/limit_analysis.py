"""Spring-series (EA)_eq along z for several slice counts: correlation with the
FE label and the per-n_s histogram.

    python scripts/limit_analysis.py --n 500 --out runs/limit.csv
"""
import argparse
from pathlib import Path

import numpy as np

from lattice_forge.dataset import DatasetConfig, generate_labeled
from lattice_forge.slicing import histogram_rows, limit_analysis, write_histogram_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--candidates", type=int, nargs="+", default=[9, 19, 49, 99])
    ap.add_argument("--bins", type=int, default=30)
    ap.add_argument("--out", type=Path, default=Path("runs/limit.csv"))
    a = ap.parse_args()
    records, _ = generate_labeled(DatasetConfig(n=a.n, seed=a.seed))
    labels = np.array([r.label for r in records])
    values = limit_analysis([r.lattice for r in records], a.candidates)
    for n_s, v in values.items():
        r = np.corrcoef(v, labels)[0, 1]
        print(f"n_s {n_s:3d}: median (EA)_eq {np.median(v):.4e} N  corr with E_z {r:.3f}")
    a.out.parent.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(a.out, histogram_rows(values, a.bins))
    print(f"wrote {a.out}")


if __name__ == "__main__":
    main()
