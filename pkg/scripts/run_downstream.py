"""Toy downstream benefit of filtering: logistic-regression F1 per strategy.

Minority samples are augmented with generations of which half are corrupted
(placed in the majority region with low gold quality); the classifier is
trained on the base data plus whatever each strategy keeps.
"""

import argparse

import numpy as np

from condfilter.evalsim import DownstreamSpec, downstream_f1
from condfilter.model import FilterConfig

STRATEGIES = ["unaugmented", "unfiltered", "fixed_surrogate_threshold:0.5", "marginal_cp", "conditional_cp"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--alpha", type=float, default=0.1)
    args = ap.parse_args()

    scores = {s: [] for s in STRATEGIES}
    for seed in range(args.seeds):
        cfg = FilterConfig(alpha=args.alpha, gamma=args.gamma, rng_seed=seed)
        for s, f1 in downstream_f1(DownstreamSpec(seed=seed), STRATEGIES, cfg).items():
            scores[s].append(f1)
    print(f"{'strategy':<32}{'mean F1':>9}{'sd':>8}{'q25':>8}{'q75':>8}")
    for s, v in scores.items():
        v = np.asarray(v)
        q25, q75 = np.quantile(v, [0.25, 0.75])
        print(f"{s:<32}{v.mean():>9.4f}{v.std(ddof=1):>8.4f}{q25:>8.4f}{q75:>8.4f}")


if __name__ == "__main__":
    main()
