"""Open-loop nonzero percentage versus fleet size, both norms.

Writes one row per replication and prints mean/std per (I, p).

    python scripts/table2.py --out runs/table2
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from gridsparse.studies import table2


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[25, 50, 100])
    ap.add_argument("--kappa", type=float, default=1e-3)
    ap.add_argument("--replications", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--weight-seed", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/table2"))
    args = ap.parse_args()

    t0 = time.perf_counter()
    rows = table2(args.sizes, (2, 1), kappa=args.kappa, replications=args.replications,
                  seed=args.seed, weight_seed=args.weight_seed)
    elapsed = time.perf_counter() - t0

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "replications.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)

    print(f"{'I':>5} {'p':>2} {'mean %':>8} {'std':>6} {'iters':>6}")
    for I in args.sizes:
        for p in (2, 1):
            cell = [r for r in rows if r["I"] == I and r["p"] == p]
            s = np.array([r["sparsity"] for r in cell])
            its = np.mean([r["iterations"] for r in cell])
            print(f"{I:>5} {p:>2} {s.mean():8.2f} {s.std():6.2f} {its:6.1f}")
    print(f"{len(rows)} solves in {elapsed:.1f} s")


if __name__ == "__main__":
    main()
