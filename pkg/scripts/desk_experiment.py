"""Compare pc_adapter, maxconf_pl and source_only on the imbalanced-synth preset.

Usage: python scripts/desk_experiment.py --seeds 0 1 2 --epochs 40 --out results/desk.json
"""

import argparse
import json
import logging
import time

import numpy as np

from pcadapter.config import TrainConfig
from pcadapter.experiments import desk_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--n", type=int, default=600, help="clouds per domain")
    ap.add_argument("--points", type=int, default=1024)
    ap.add_argument("--methods", nargs="+", default=["pc_adapter", "maxconf_pl", "source_only"])
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="TrainConfig override, repeatable")
    ap.add_argument("--out", default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    overrides = {}
    for item in args.set:
        key, value = item.split("=", 1)
        overrides[key] = type(getattr(TrainConfig(), key))(value)
    base = TrainConfig(epochs=args.epochs, **overrides)

    t0 = time.time()
    runs = desk_comparison(args.seeds, base, args.methods, n_per_domain=args.n,
                           points_per_cloud=args.points)
    elapsed = time.time() - t0

    for method in args.methods:
        acc = [r["accuracy"] for r in runs if r["method"] == method]
        bacc = [r["balanced_accuracy"] for r in runs if r["method"] == method]
        minority = [r["minority_pl"] for r in runs if r["method"] == method]
        print(f"{method:12s} acc {np.mean(acc):.4f} ± {np.std(acc):.4f}  "
              f"bacc {np.mean(bacc):.4f} ± {np.std(bacc):.4f}  minority PL {minority}")
    print(f"elapsed {elapsed:.1f} s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": vars(base), "runs": runs, "elapsed_s": elapsed}, fh, indent=1)


if __name__ == "__main__":
    main()
