#!/usr/bin/env python3
"""Cross-validated training on synthetic data.

Synthesizes a ground truth, draws a corpus, trains one model per disjoint
split and reports the pairwise dcs matrix between all models and the ground
truth.  Row 0 / column 0 is the ground truth.
"""

import argparse
import json
import time

import numpy as np

from cellassembly.evaluation import pairwise_delta_cs
from cellassembly.learning import LearnConfig, train
from cellassembly.synthesis import SynthHyperparams, generate_dataset, synthesize_gt


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--preset", choices=["natural_movie", "white_noise"], default="natural_movie")
    p.add_argument("--cells", type=int, default=20)
    p.add_argument("--latents", type=int, default=20)
    p.add_argument("--words", type=int, default=120_000)
    p.add_argument("--splits", type=int, default=3)
    p.add_argument("--passes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write the results here")
    return p.parse_args()


def main():
    args = parse_args()
    hyper = getattr(SynthHyperparams, args.preset)(N=args.cells, M=args.latents)
    rng = np.random.default_rng(args.seed)
    gt = synthesize_gt(hyper, rng)
    Y = generate_dataset(gt, args.words, rng).Y

    strengths = [gt.strengths()]
    for k, part in enumerate(np.array_split(Y, args.splits)):
        t0 = time.perf_counter()
        cfg = LearnConfig(n_passes=args.passes, rng_seed=args.seed * 1000 + k)
        model, trace, _ = train(part, cfg, args.latents)
        strengths.append(model.strengths())
        print(f"model {k}: {part.shape[0]} words, final mean log joint "
              f"{trace.mean_log_joint[-1]:.3f}, Q={model.Q:.3f}, {time.perf_counter() - t0:.0f}s")

    D = pairwise_delta_cs(strengths)
    labels = ["GT"] + [f"m{k}" for k in range(args.splits)]
    print("\ndcs matrix")
    print("      " + "".join(f"{lab:>8}" for lab in labels))
    for lab, row in zip(labels, D):
        print(f"{lab:>6}" + "".join(f"{v:8.3f}" for v in row))
    vs_gt = D[0, 1:]
    cross = D[1:, 1:][np.triu_indices(args.splits, k=1)]
    print(f"\nmean dcs vs GT {vs_gt.mean():.3f}; mean model-model dcs {cross.mean():.3f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"args": vars(args), "labels": labels, "delta_cs": D.tolist()}, fh, indent=2)


if __name__ == "__main__":
    main()
