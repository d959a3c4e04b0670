"""One binary with subcommands for the whole workflow.

collect     drive a simulated cable around and record training tuples
train       fit the radial-basis Jacobian model to a dataset
eval-model  score a trained model against a held-out dataset
control     run closed-loop shape-control episodes
oracle      compare the implicit Jacobian against finite differences
bench       run the full acceptance battery, emit CSV and SVG

Exit codes: 0 on success, 1 when inputs fail validation, 2 when a run
fails at runtime. Errors go to stderr as one JSON object so batch
drivers can parse them.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .datasets import (
    collect_domain_randomized,
    collect_random,
    load_dataset,
    save_dataset,
)
from .episodes import desired_shape_pool, run_battery
from .evaluation import evaluate_model, transform_dataset
from .metrics import result_to_dict, summarize, summary_csv
from .rbfn import load_model, save_model
from .training import train_offline


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors."""

    def error(self, message):
        raise ConfigError(message)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _emit(report: dict) -> None:
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _write_json(path: str | None, report: dict) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))


def _split_seed(seed: int, count: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_collect(args) -> int:
    cfg = _load_config(args)
    ccfg = cfg.collection_config(duration=args.duration)
    cables = cfg.cables()
    if len(cables) == 1:
        dataset = collect_random(cables[0], ccfg)
    else:
        dataset = collect_domain_randomized(cables, ccfg)
    save_dataset(dataset, args.out)
    _emit({"command": "collect", "tuples": len(dataset),
           "cables": len(cables), "out": args.out})
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset(args.data)
    tcfg = dataclasses.replace(cfg.training, seed=cfg.seed)
    if args.no_augmentation:
        tcfg = dataclasses.replace(tcfg, augment_rotations=False)
    if args.no_scale_normalization:
        tcfg = dataclasses.replace(tcfg, scale_normalize=False)
    model = train_offline(dataset, tcfg)
    save_model(model, args.out)
    _emit({
        "command": "train",
        "tuples": len(dataset),
        "neurons": model.neuron_count,
        "best_val_loss": model.provenance["best_val_loss"],
        "train_seconds": model.provenance["train_seconds"],
        "out": args.out,
    })
    return 0


def _parse_offset(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError("--translate expects 'dx,dy,dz'")
    try:
        dx, dy, dz = (float(p) for p in parts)
    except ValueError as err:
        raise ConfigError(f"--translate: {err}") from err
    return dx, dy, dz


def cmd_eval_model(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    transform = {}
    if args.rotate_deg or args.translate:
        offset = _parse_offset(args.translate) if args.translate else (0.0,) * 3
        angle = math.radians(args.rotate_deg or 0.0)
        dataset = transform_dataset(dataset, angle=angle, offset=offset)
        transform = {"rotate_deg": args.rotate_deg or 0.0, "offset": offset}
    report = evaluate_model(model, dataset, steps=args.steps)
    report["command"] = "eval-model"
    if transform:
        report["transform"] = transform
    _write_json(args.out, report)
    _emit(report)
    return 0


def cmd_control(args) -> int:
    cfg = _load_config(args)
    method = args.method or cfg.battery.method
    episodes = args.episodes or cfg.battery.episodes
    ecfg = cfg.episode_config(method)
    model = load_model(args.model) if args.model else None
    if method != "wls" and model is None:
        raise ConfigError(f"method {method!r} needs --model")

    goal_seed, battery_seed = _split_seed(cfg.seed, 2)
    if args.goals:
        doc = json.loads(Path(args.goals).read_text())
        pool = np.asarray(doc["goals"], dtype=float)
        if pool.ndim != 3 or pool.shape[2] != 3:
            raise ConfigError(f"{args.goals}: goals must have shape (n, m, 3)")
    else:
        pool = desired_shape_pool(cfg.dlo, episodes, goal_seed,
                                  feature_count=ecfg.feature_count,
                                  mode=cfg.mode)
    workers = int(os.environ.get("DLOLAB_WORKERS", cfg.battery.workers))
    t0 = time.perf_counter()
    results = run_battery(cfg.dlo, pool, ecfg, battery_seed, model=model,
                          workers=workers)
    elapsed = time.perf_counter() - t0

    out_dir = Path(args.out or cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "goals.json").write_text(json.dumps({"goals": pool.tolist()}))
    with open(out_dir / "episodes.jsonl", "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result_to_dict(result)) + "\n")
    (out_dir / "summary.csv").write_text(summary_csv(summarize(results)))

    row = summarize(results)[0]
    report = {"command": "control", "elapsed_seconds": elapsed,
              "out": str(out_dir), **row}
    _emit(report)
    return 0


def cmd_oracle(args) -> int:
    from .bench import jacobian_fd_battery

    cfg = _load_config(args)
    report = jacobian_fd_battery(cfg.dlo, samples=args.samples,
                                 seed=cfg.seed,
                                 node_count=cfg.sim.node_count,
                                 planar=cfg.mode == "2d")
    report["command"] = "oracle"
    _write_json(args.out, report)
    _emit(report)
    return 0


def cmd_bench(args) -> int:
    from .bench import run_benchmark

    cfg = _load_config(args)
    criteria = None
    if args.criteria:
        try:
            criteria = sorted({int(c) for c in args.criteria.split(",")})
        except ValueError as err:
            raise ConfigError(f"--criteria: {err}") from err
    results = run_benchmark(cfg, args.out, criteria=criteria,
                            cache_dir=args.cache_dir)
    report = {
        "command": "bench",
        "out": args.out,
        "criteria": {str(r.index): {"passed": r.passed, "detail": r.detail}
                     for r in results},
        "all_passed": all(r.passed for r in results),
    }
    _emit(report)
    return 0


# ---------------------------------------------------------------------------
# Wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="dlolab",
                     description="shape control of deformable linear objects")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    p = add("collect", cmd_collect, help="record training tuples")
    p.add_argument("--out", required=True, help="dataset file (.jsonl or .jsonl.gz)")
    p.add_argument("--duration", type=float, help="seconds of motion to record")

    p = add("train", cmd_train, help="fit the Jacobian model")
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--no-augmentation", action="store_true",
                   help="disable rotation augmentation")
    p.add_argument("--no-scale-normalization", action="store_true",
                   help="disable length normalization of the state")

    p = add("eval-model", cmd_eval_model, help="score a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=10,
                   help="open-loop prediction horizon")
    p.add_argument("--rotate-deg", type=float,
                   help="rotate the testset about vertical first")
    p.add_argument("--translate", help="shift the testset by 'dx,dy,dz'")
    p.add_argument("--out", help="write the report JSON here too")

    p = add("control", cmd_control, help="closed-loop control episodes")
    p.add_argument("--model", help="trained model (all methods except wls)")
    p.add_argument("--method", help="ours | ours-noadapt | wls | mppi | naive-p")
    p.add_argument("--episodes", type=int, help="number of goal shapes")
    p.add_argument("--goals", help="JSON goal file; otherwise goals are sampled")
    p.add_argument("--out", help="directory for logs and summaries")

    p = add("oracle", cmd_oracle, help="implicit vs finite-difference Jacobian")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", help="write the report JSON here too")

    p = add("bench", cmd_bench, help="run the acceptance battery")
    p.add_argument("--out", required=True, help="directory for CSV and SVG")
    p.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,10")
    p.add_argument("--cache-dir", help="reuse trained artifacts from here")

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as err:
        json.dump({"error": str(err), "type": "validation"}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except ValueError as err:
        json.dump({"error": str(err), "type": "validation",
                   "kind": type(err).__name__}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except Exception as err:  # noqa: BLE001 - the CLI boundary
        json.dump({"error": str(err), "type": "runtime",
                   "kind": type(err).__name__}, sys.stderr)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
