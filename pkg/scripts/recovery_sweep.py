#!/usr/bin/env python3
"""Ground-truth recovery (dcs) for both synthesis presets over several seeds."""

import argparse
import json

import numpy as np

from cellassembly.evaluation import match_assemblies
from cellassembly.inference import PriorKind
from cellassembly.learning import LearnConfig, train
from cellassembly.synthesis import SynthHyperparams, generate_dataset, synthesize_gt


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--size", type=int, default=20, help="N = M")
    p.add_argument("--words", type=int, default=100_000)
    p.add_argument("--passes", type=int, default=3)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--prior", choices=[k.value for k in PriorKind], default="binomial")
    p.add_argument("--json")
    args = p.parse_args()

    results = {}
    for kind in ("natural_movie", "white_noise"):
        rows = []
        for seed in args.seeds:
            rng = np.random.default_rng(seed)
            gt = synthesize_gt(getattr(SynthHyperparams, kind)(N=args.size, M=args.size), rng)
            Y = generate_dataset(gt, args.words, rng).Y
            cfg = LearnConfig(learning_rate=args.lr, n_passes=args.passes, rng_seed=seed,
                              prior_kind=args.prior)
            model, trace, _ = train(Y, cfg, args.size)
            rep = match_assemblies(gt.P, model.P)
            rows.append({"seed": seed, "delta_cs": rep.delta_cs, "Q": model.Q,
                         "mean_R": float(model.R.mean()), "gt_Q": gt.Q,
                         "latents_used": int((trace.usage > 0).sum())})
            print(f"{kind:>13} seed {seed}: dcs {rep.delta_cs:.3f}  Q {model.Q:.3f} "
                  f"(GT {gt.Q:.3f})  mean R {model.R.mean():.3f}")
        results[kind] = rows
        print(f"{kind:>13} mean dcs {np.mean([r['delta_cs'] for r in rows]):.3f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"args": vars(args), "results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
