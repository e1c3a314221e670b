"""Repeat the simulation study and print mean out-of-sample R^2 per model.

    python scripts/run_montecarlo.py --model 2 --reps 50 --models lasso,xgb,nn2
"""
import argparse
import json
import sys

from retcast.montecarlo import run_study
from retcast.simgen import true_covariates


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", type=int, choices=(1, 2), default=1)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--T", type=int, default=3600)
    ap.add_argument("--pc", type=int, default=50)
    ap.add_argument("--models", default="lasso,ridge")
    ap.add_argument("--json", help="write per-rep results here")
    args = ap.parse_args(argv)
    names = tuple(m.strip() for m in args.models.split(",") if m.strip())

    def progress(k, rep):
        line = " ".join(f"{m}={v:.4f}" for m, v in rep.r2.items())
        print(f"rep {k + 1}/{args.reps}: {line}", file=sys.stderr, flush=True)

    res = run_study(args.model, names, reps=args.reps, seed0=args.seed, progress=progress, T=args.T, P_C=args.pc)
    for m in names + ("oracle",):
        print(f"{m:8s} {res.mean_r2(m): .4f}")
    if "lasso" in names:
        truth = set(true_covariates(args.model))
        freq = res.selection_frequency("lasso")
        print("lasso selection frequency of true covariates:",
              ", ".join(f"{k}={freq[k]:.2f}" for k in freq if k in truth))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{"seed": r.seed, "r2": r.r2, "params": {k: {a: repr(b) for a, b in v.items()}
                                                                 for k, v in r.params.items()}}
                       for r in res.reps], fh, indent=1)


if __name__ == "__main__":
    main()
