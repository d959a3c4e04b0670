"""All controllers on the same battery of goal shapes.

Trains one model on the target cable, samples a shared pool of feasible
goals, and runs every method on it: the adaptive controller, the frozen
variant, sampling-based MPPI, the online weighted-least-squares
estimator, and the naive pseudoinverse law.

    python3 scripts/baseline_shootout.py --episodes 8 --out runs/shootout
"""

import argparse
from pathlib import Path

from dlolab import (
    CollectConfig,
    DloParams,
    EpisodeConfig,
    TrainConfig,
    collect_random,
    desired_shape_pool,
    run_battery,
    summarize,
    summary_csv,
    train_offline,
)

METHODS = ("ours", "ours-noadapt", "mppi", "wls", "naive-p")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=8)
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--tuples", type=int, default=6000)
    ap.add_argument("--epochs", type=int, default=80)
    ap.add_argument("--length", type=float, default=0.5)
    ap.add_argument("--diameter", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/shootout")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dlo = DloParams(args.length, args.diameter)
    dt = 0.1

    print(f"collecting {args.tuples} tuples ...")
    data = collect_random(dlo, CollectConfig(duration=args.tuples * dt,
                                             dt=dt, seed=args.seed))
    model = train_offline(data, TrainConfig(epochs=args.epochs,
                                            seed=args.seed))
    goals = desired_shape_pool(dlo, args.episodes, args.seed + 1)

    results = []
    for method in METHODS:
        print(f"running {method} ...")
        ecfg = EpisodeConfig(method=method, duration=args.duration, dt=dt)
        results += run_battery(dlo, goals, ecfg, args.seed + 2,
                               model=None if method == "wls" else model)

    table = summary_csv(summarize(results))
    print(table)
    (out / "summary.csv").write_text(table)
    print(f"wrote {out}/summary.csv")


if __name__ == "__main__":
    main()
