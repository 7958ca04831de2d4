"""Rank agreement of delta-KNN with the exact log-likelihood ratio as training grows.

Also compares the plain k-th-distance form against the averaged form for
increasing k on a fixed training set.

    python3 scripts/knn_consistency.py --sizes 1000,10000,50000
"""

import argparse
import json
import math

from selectorlab.distance_scores import delta_knn, fit_delta_knn_indices
from selectorlab.np_oracle import gaussian_vs_mixture_spec, generate, spearman_rho, verify_np_ranking


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,10000,50000")
    ap.add_argument("--ks", default="4,16,64,128")
    ap.add_argument("--n-eval", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    ks = [int(k) for k in args.ks.split(",")]

    ev = generate(gaussian_vs_mixture_spec(args.n_eval, args.seed))
    log_lr = ev.oracle.log_lr(ev.features)
    growth = []
    for i, n in enumerate(sizes):
        train = generate(gaussian_vs_mixture_spec(n, args.seed + 1 + i)).dataset
        idx_c, idx_w = fit_delta_knn_indices(train.features, train.correct, normalize=False)
        k = min(math.ceil(math.sqrt(n)), idx_c.size, idx_w.size)
        row = {"n": n, "k": k}
        for averaged in (False, True):
            rho, tau = verify_np_ranking(delta_knn(idx_c, idx_w, ev.features, k, averaged=averaged), log_lr)
            row["averaged" if averaged else "plain"] = {"rho": rho, "tau": tau}
        growth.append(row)

    train = generate(gaussian_vs_mixture_spec(max(sizes), args.seed + 100)).dataset
    idx_c, idx_w = fit_delta_knn_indices(train.features, train.correct, normalize=False)
    agreement = [
        {"k": k, "rho_plain_vs_averaged": spearman_rho(
            delta_knn(idx_c, idx_w, ev.features, k, averaged=False),
            delta_knn(idx_c, idx_w, ev.features, k, averaged=True))}
        for k in ks
    ]
    print(json.dumps({"growth": growth, "plain_vs_averaged": agreement}, indent=2))


if __name__ == "__main__":
    main()
