"""How much data does the Jacobian model need?

Collects one long random-motion recording, trains on nested subsets of
increasing size, and scores each model on a held-out testset: median
velocity-prediction error and mean 10-step open-loop shape error.

Run from the repository root, e.g.

    python3 scripts/data_efficiency.py --sizes 1000 2000 5000 --out runs/de
"""

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dlolab import CollectConfig, DloParams, TrainConfig, collect_random, train_offline
from dlolab.evaluation import shape_rollout_errors, velocity_errors


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[1000, 2000, 5000])
    ap.add_argument("--test-size", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=80)
    ap.add_argument("--neurons", type=int, default=128)
    ap.add_argument("--length", type=float, default=0.5)
    ap.add_argument("--diameter", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/data_efficiency")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dlo = DloParams(args.length, args.diameter)
    dt = 0.1

    print(f"collecting {max(args.sizes)} training tuples ...")
    corpus = collect_random(dlo, CollectConfig(
        duration=max(args.sizes) * dt, dt=dt, seed=args.seed))
    test = collect_random(dlo, CollectConfig(
        duration=args.test_size * dt, dt=dt, seed=args.seed + 1))

    rows = []
    for size in sorted(args.sizes):
        tcfg = TrainConfig(neuron_count=args.neurons, epochs=args.epochs,
                           seed=args.seed)
        model = train_offline(corpus.subset(size), tcfg)
        evel, _ = velocity_errors(model, test)
        eshape = shape_rollout_errors(model, test, steps=10, max_windows=300)
        rows.append({
            "size": size,
            "e_vel_median_percent": float(np.median(evel)),
            "e_shape_mean": float(np.mean(eshape)),
            "train_seconds": model.provenance["train_seconds"],
        })
        print(f"  n={size:6d}  e_vel {rows[-1]['e_vel_median_percent']:6.2f}%"
              f"  e_shape {rows[-1]['e_shape_mean']:.4f} m"
              f"  ({rows[-1]['train_seconds']:.0f} s)")

    (out / "results.json").write_text(json.dumps(rows, indent=2))

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    sizes = [r["size"] for r in rows]
    axes[0].loglog(sizes, [r["e_vel_median_percent"] for r in rows], "o-")
    axes[0].set_xlabel("training tuples")
    axes[0].set_ylabel("median velocity error (%)")
    axes[1].loglog(sizes, [r["e_shape_mean"] for r in rows], "o-")
    axes[1].set_xlabel("training tuples")
    axes[1].set_ylabel("mean 10-step shape error (m)")
    for ax in axes:
        ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "data_efficiency.svg")
    print(f"wrote {out}/results.json and {out}/data_efficiency.svg")


if __name__ == "__main__":
    main()
