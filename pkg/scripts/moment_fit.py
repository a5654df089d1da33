#!/usr/bin/env python3
"""Moment-matched hyperparameter search against a synthetic target.

The target corpus comes from a known lattice point, so the script shows
whether the QQ-based grid search picks it back out.
"""

import argparse

import numpy as np

from cellassembly.statistics import corpus_for, fit_hyperparams, hyper_grid, moments, qq_report
from cellassembly.synthesis import SynthHyperparams


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cells", type=int, default=20)
    p.add_argument("--latents", type=int, default=20)
    p.add_argument("--words", type=int, default=20_000)
    p.add_argument("--target", choices=["natural_movie", "white_noise"], default="natural_movie")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    truth = getattr(SynthHyperparams, args.target)(N=args.cells, M=args.latents)
    grid = hyper_grid(truth, K=[1, 2], C=[2, 6], mu_P=[0.3, 0.55])
    target = moments(corpus_for(truth, args.words, [args.seed, 0]))
    best, rep, reports = fit_hyperparams(target, grid, args.words, seed=args.seed + 1)

    print(f"{'K':>3} {'C':>3} {'mu_P':>5} {'len':>8} {'mean':>8} {'pair':>8} {'combined':>9}")
    for h, r in sorted(zip(grid, reports), key=lambda hr: hr[1].combined):
        mark = " <- truth" if (h.K, h.C, h.mu_P) == (truth.K, truth.C, truth.mu_P) else ""
        print(f"{h.K:>3} {h.C:>3} {h.mu_P:>5} {r.qq_length:8.4f} {r.qq_mean:8.4f} "
              f"{r.qq_pair:8.4f} {r.combined:9.4f}{mark}")
    floor = [qq_report(moments(corpus_for(truth, args.words, [args.seed, 1, k])),
                       moments(corpus_for(truth, args.words, [args.seed, 2, k]))).combined
             for k in range(5)]
    print(f"\nselected K={best.K} C={best.C} mu_P={best.mu_P} (combined {rep.combined:.4f}); "
          f"same-generator QQ over 5 pairs: mean {np.mean(floor):.4f}, max {np.max(floor):.4f}")


if __name__ == "__main__":
    main()
