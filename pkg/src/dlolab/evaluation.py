"""Offline model evaluation against recorded datasets.

Two views of model quality: the per-tuple relative velocity prediction
error, and the open-loop shape error after rolling the model forward
for a fixed number of recorded commands.
"""

from __future__ import annotations

import numpy as np

from .datasets import Dataset
from .rbfn import RbfnModel, model_inputs, predict_velocity_batch, rollout
from .staterep import rotate_about_vertical_batch


def velocity_errors(model: RbfnModel, dataset: Dataset) -> tuple[np.ndarray, int]:
    """Per-tuple relative velocity errors in percent.

    Tuples with zero measured feature velocity are excluded; the second
    return value counts them.
    """
    s, u = model_inputs(model, dataset.x, dataset.r, dataset.nu,
                        dataset.lengths)
    pred = predict_velocity_batch(model, s, u)
    truth = dataset.xdot.reshape(len(dataset), -1)
    truth_norm = np.linalg.norm(truth, axis=1)
    keep = truth_norm > 0
    err = np.linalg.norm(truth[keep] - pred[keep], axis=1)
    return 100.0 * err / truth_norm[keep], int((~keep).sum())


def _window_starts(dataset: Dataset, steps: int) -> np.ndarray:
    """Start indices whose next `steps` tuples form one contiguous run."""
    t = dataset.t
    idx = dataset.dlo_index
    n = len(dataset)
    if n <= steps:
        return np.zeros(0, dtype=int)
    dt = np.diff(t)
    step_ok = (dt > 0) & (np.abs(dt - np.median(dt)) < 1e-9)
    same_dlo = idx[1:] == idx[:-1]
    link = step_ok & same_dlo
    ok = np.ones(n - steps, dtype=bool)
    for k in range(steps):
        ok &= link[k:k + n - steps]
    return np.flatnonzero(ok)


def shape_rollout_errors(
    model: RbfnModel,
    dataset: Dataset,
    steps: int = 10,
    max_windows: int = 500,
    seed: int = 0,
) -> np.ndarray:
    """Stacked-norm shape errors after `steps` predicted steps.

    Each window starts from a recorded state, applies the recorded
    commands through the model, and compares the predicted features to
    the recorded ones at the window's end.
    """
    starts = _window_starts(dataset, steps)
    if starts.size == 0:
        raise ValueError(f"no contiguous {steps}-step windows in dataset")
    if starts.size > max_windows:
        rng = np.random.default_rng(seed)
        starts = np.sort(rng.choice(starts, size=max_windows, replace=False))
    dt = float(np.median(np.diff(dataset.t)))
    errors = np.empty(starts.size)
    for w, i in enumerate(starts):
        length = dataset.dlos[int(dataset.dlo_index[i])].length
        nus = dataset.nu[i + 1:i + steps + 1]
        pred = rollout(model, dataset.x[i], dataset.r[i], nus, length, dt)
        errors[w] = np.linalg.norm(pred[-1] - dataset.x[i + steps])
    return errors


def transform_dataset(dataset: Dataset, angle=0.0,
                      offset=(0.0, 0.0, 0.0)) -> Dataset:
    """Rigidly move every tuple: rotate about vertical, then translate.

    `angle` may be a scalar or one value per tuple; `offset` likewise a
    single vector or an (N, 3) array.
    """
    n = len(dataset)
    angles = np.broadcast_to(np.asarray(angle, dtype=float), (n,)).copy()
    x, xdot, r, nu = rotate_about_vertical_batch(
        dataset.x, dataset.xdot, dataset.r, dataset.nu, angles=angles)
    shift = np.broadcast_to(np.asarray(offset, dtype=float), (n, 3))
    x = x + shift[:, None, :]
    r = r.copy()
    r[:, 0:3] += shift
    r[:, 7:10] += shift
    return Dataset(
        feature_count=dataset.feature_count,
        x=x, xdot=xdot, r=r, nu=nu,
        t=dataset.t.copy(), dlo_index=dataset.dlo_index.copy(),
        dlos=list(dataset.dlos),
        metadata={**dataset.metadata,
                  "transform": {"angle_mean": float(np.mean(angles)),
                                "offset_mean": shift.mean(axis=0).tolist()}},
    )


def evaluate_model(model: RbfnModel, dataset: Dataset, steps: int = 10,
                   max_windows: int = 500) -> dict:
    """Full report: e_vel distribution and n-step shape errors."""
    evel, excluded = velocity_errors(model, dataset)
    report = {
        "tuples": len(dataset),
        "excluded_zero_velocity": excluded,
        "e_vel_percent": {
            "median": float(np.median(evel)),
            "mean": float(np.mean(evel)),
            "p90": float(np.percentile(evel, 90)),
        },
        "rollout_steps": steps,
    }
    try:
        eshape = shape_rollout_errors(model, dataset, steps=steps,
                                      max_windows=max_windows)
    except ValueError:
        report["e_shape"] = None
    else:
        report["e_shape"] = {
            "mean": float(np.mean(eshape)),
            "median": float(np.median(eshape)),
            "p90": float(np.percentile(eshape, 90)),
            "windows": int(eshape.size),
        }
    return report
