"""Evaluation quantities: deformation sizes, model errors, control summaries.

Task errors are norms of the full stacked target vector, never averaged
over features, so numbers stay comparable across target-set sizes only
when those sets match, which the episode protocol guarantees.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field

import numpy as np

SUCCESS_THRESHOLD = 0.05   # meters of stacked final error
SUCCESS_HOLD = 1.0         # seconds below threshold before success counts


def translation(x1: np.ndarray, x2: np.ndarray) -> float:
    """Distance between the feature centroids of two shapes."""
    if x1.shape != x2.shape:
        raise ValueError("shapes must share the feature layout")
    return float(np.linalg.norm(x1.mean(axis=0) - x2.mean(axis=0)))


def relative_deformation(x1: np.ndarray, x2: np.ndarray) -> float:
    """Mean per-feature displacement once the centroid motion is removed."""
    if x1.shape != x2.shape:
        raise ValueError("shapes must share the feature layout")
    c1 = x1 - x1.mean(axis=0)
    c2 = x2 - x2.mean(axis=0)
    return float(np.mean(np.linalg.norm(c1 - c2, axis=1)))


def shape_prediction_error(x_pred: np.ndarray, x_true: np.ndarray) -> float:
    """Stacked Euclidean distance between predicted and true features."""
    return float(np.linalg.norm(np.asarray(x_pred).reshape(-1)
                                - np.asarray(x_true).reshape(-1)))


def velocity_relative_error(xdot: np.ndarray, predicted: np.ndarray
                            ) -> float | None:
    """Relative feature-velocity prediction error in percent.

    Returns None for zero measured velocity; aggregate with
    `aggregate_velocity_errors` which counts the exclusions.
    """
    xdot = np.asarray(xdot).reshape(-1)
    predicted = np.asarray(predicted).reshape(-1)
    n = np.linalg.norm(xdot)
    if n == 0.0:
        return None
    return float(np.linalg.norm(xdot - predicted) / n * 100.0)


def aggregate_velocity_errors(pairs) -> tuple[np.ndarray, int]:
    """Per-sample e_vel values and the number of excluded zero-velocity
    samples; pairs iterates (xdot, predicted)."""
    vals = []
    excluded = 0
    for xdot, pred in pairs:
        e = velocity_relative_error(xdot, pred)
        if e is None:
            excluded += 1
        else:
            vals.append(e)
    return np.array(vals), excluded


@dataclass
class EpisodeResult:
    method: str
    seed: int
    final_error: float                  # stacked norm at the time budget
    success: bool
    time_to_success: float | None
    error_trace: list[float] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    translation_to_goal: float = 0.0    # between initial and desired shapes
    deformation_to_goal: float = 0.0
    truncated: bool = False             # simulator failure before the budget
    max_nu_norm: float = 0.0
    max_strain: float = 0.0
    descent_violations: int = 0         # steps with positive error . J nu
    extra: dict = field(default_factory=dict)


def time_to_success(times: np.ndarray, errors: np.ndarray,
                    threshold: float = SUCCESS_THRESHOLD,
                    hold: float = SUCCESS_HOLD) -> float | None:
    """First time the error drops below threshold and stays there for
    at least `hold` seconds (through the end of the trace)."""
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    below = errors < threshold
    start = None
    for t, ok in zip(times, below):
        if ok and start is None:
            start = t
        elif not ok:
            start = None
    if start is None:
        return None
    if times[-1] - start + 1e-12 < hold:
        return None
    return float(start)


def finish_episode(result: EpisodeResult) -> EpisodeResult:
    """Fill the success fields from the recorded trace."""
    result.success = (not result.truncated
                      and result.final_error < SUCCESS_THRESHOLD)
    result.time_to_success = time_to_success(np.array(result.times),
                                             np.array(result.error_trace))
    return result


def result_to_dict(result: EpisodeResult) -> dict:
    """JSON-ready form of an episode result (log files, caches)."""
    rec = dataclasses.asdict(result)
    rec["times"] = [float(v) for v in rec["times"]]
    rec["error_trace"] = [float(v) for v in rec["error_trace"]]
    return rec


def result_from_dict(rec: dict) -> EpisodeResult:
    return EpisodeResult(**rec)


SUMMARY_COLUMNS = ("method", "episodes", "success_rate", "avg_error",
                   "avg_successful_error", "avg_time_to_success")


def summarize(results: list[EpisodeResult]) -> list[dict]:
    """Per-method summary rows in the fixed CSV column order."""
    rows = []
    for method in sorted({r.method for r in results}):
        group = [r for r in results if r.method == method]
        succ = [r for r in group if r.success]
        with_time = [r for r in succ if r.time_to_success is not None]
        rows.append({
            "method": method,
            "episodes": len(group),
            "success_rate": len(succ) / len(group),
            "avg_error": float(np.mean([r.final_error for r in group])),
            "avg_successful_error": (
                float(np.mean([r.final_error for r in succ]))
                if succ else math.nan),
            "avg_time_to_success": (
                float(np.mean([r.time_to_success for r in with_time]))
                if with_time else math.nan),
        })
    return rows


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
