"""Control a cable the model has never seen.

Trains the Jacobian model on a small family of cables, then runs
closed-loop shape control on a held-out cable, once with online
adaptation and once with the offline weights frozen. Prints the summary
table and saves the error traces.

    python3 scripts/transfer_control.py --episodes 10 --out runs/transfer
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dlolab import (
    CollectConfig,
    DloParams,
    EpisodeConfig,
    TrainConfig,
    collect_domain_randomized,
    desired_shape_pool,
    run_battery,
    summarize,
    summary_csv,
    train_offline,
)

TRAIN_FAMILY = [DloParams(0.3, 16.0), DloParams(0.6, 8.0),
                DloParams(0.9, 22.0), DloParams(1.2, 14.0)]
HELD_OUT = DloParams(0.5, 10.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=10)
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--tuples-per-cable", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=80)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/transfer")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dt = 0.1

    print(f"collecting {args.tuples_per_cable} tuples on each of "
          f"{len(TRAIN_FAMILY)} cables ...")
    corpus = collect_domain_randomized(TRAIN_FAMILY, CollectConfig(
        duration=args.tuples_per_cable * dt, dt=dt, seed=args.seed))
    model = train_offline(corpus, TrainConfig(epochs=args.epochs,
                                              seed=args.seed))

    goals = desired_shape_pool(HELD_OUT, args.episodes, args.seed + 1)
    batteries = {}
    for method in ("ours", "ours-noadapt"):
        ecfg = EpisodeConfig(method=method, duration=args.duration, dt=dt)
        batteries[method] = run_battery(HELD_OUT, goals, ecfg,
                                        args.seed + 2, model=model)

    rows = summarize(batteries["ours"] + batteries["ours-noadapt"])
    print(summary_csv(rows))
    (out / "summary.csv").write_text(summary_csv(rows))

    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5), sharey=True)
    for ax, (label, results) in zip(axes, batteries.items()):
        for r in results:
            ax.plot(r.times[:len(r.error_trace)], r.error_trace,
                    lw=0.8, alpha=0.8)
        ax.axhline(0.05, color="k", ls="--", lw=0.8)
        ax.set_title(label)
        ax.set_xlabel("time (s)")
    axes[0].set_ylabel("stacked shape error (m)")
    fig.tight_layout()
    fig.savefig(out / "transfer_traces.svg")
    print(f"wrote {out}/summary.csv and {out}/transfer_traces.svg")


if __name__ == "__main__":
    main()
