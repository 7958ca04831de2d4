"""NAURC of each score when only a fraction of the labeled training set is kept.

Cells where the score cannot be fitted (for instance too few misclassified
samples for a pooled covariance) are reported as ``n/a``.

    python3 scripts/labeled_fraction_ablation.py --out runs/fractions
"""

import argparse
import csv
from pathlib import Path

from selectorlab.data import subsample_labeled
from selectorlab.errors import SelectorLabError
from selectorlab.evaluation import evaluate
from selectorlab.np_oracle import SelectiveBenchmarkSpec, selective_benchmark
from selectorlab.pipeline import Scorer, ScoringConfig

METHODS = ("rlog", "delta-mds", "delta-knn", "delta-mds-rlog", "delta-knn-rlog")
FRACTIONS = (0.001, 0.01, 0.1, 0.5, 1.0)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/fractions"))
    args = ap.parse_args()

    spec = SelectiveBenchmarkSpec()
    train, calib, test = (selective_benchmark(spec, args.n, args.seed + i)[0] for i in range(3))
    rows = []
    for method in METHODS:
        row = [method]
        for frac in FRACTIONS:
            sub = subsample_labeled(train, frac, seed=args.seed)
            try:
                r = evaluate(Scorer(sub, ScoringConfig(), calib=calib).score(method, test), test.correct)
                row.append("n/a" if r.naurc is None else f"{r.naurc:.4f}")
            except SelectorLabError:
                row.append("n/a")
        rows.append(row)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "fraction_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", *map(str, FRACTIONS)])
        w.writerows(rows)
    for row in [["method", *map(str, FRACTIONS)], *rows]:
        print("".join(f"{cell:>16}" for cell in row))


if __name__ == "__main__":
    main()
