"""Online weight adaptation for the learned Jacobian during control.

A sliding window keeps the last T_w control-rate measurements together
with their cached RBF activations. Several times per control period the
target-feature weight rows take an explicit Euler step along two terms:
a task term proportional to the current tracking error, and a window
term that is a gradient step down the normalized prediction error of
the stored samples, re-evaluated against the weights as they move.
The window step backs off when the loss curvature would make the Euler
step unstable. Features outside the target set are never touched.

Window entries pair the state reached at the end of a control interval
with the command applied during it and the backward-difference feature
velocity, the same convention the offline datasets use.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .rbfn import RbfnModel, activations, predict_velocity_batch
from .staterep import relative_state


class AdaptationError(RuntimeError):
    """Raised when the update produces non-finite weights."""


@dataclass
class AdaptConfig:
    rate: float = 1.0            # scales the whole update
    window_weight: float = 10.0  # gain on the window gradient term
    window_size: int = 20
    velocity_floor: float = 0.01  # lower bound on the normalizer
    substeps: int = 5             # updates per control step

    def validate(self) -> None:
        if min(self.rate, self.window_weight, self.velocity_floor) < 0:
            raise ValueError("rates and floor must be nonnegative")
        if self.window_size < 1 or self.substeps < 1:
            raise ValueError("window_size and substeps must be >= 1")


@dataclass
class WindowEntry:
    t: float
    theta: np.ndarray    # (q,) cached activations
    nu: np.ndarray       # (12,) command applied over the interval
    xdot: np.ndarray     # (3m,) measured feature velocity
    n_v: float           # max(|xdot|, floor)


class SlidingWindow:
    """Ring buffer of recent measurements with strictly increasing times."""

    def __init__(self, size: int):
        self.entries: deque[WindowEntry] = deque(maxlen=size)

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, t: float, theta: np.ndarray, nu: np.ndarray,
             xdot: np.ndarray, floor: float) -> WindowEntry:
        if self.entries and t <= self.entries[-1].t:
            raise ValueError(
                f"window entry at t={t} not newer than t={self.entries[-1].t}")
        entry = WindowEntry(
            t=float(t),
            theta=np.asarray(theta, dtype=float).copy(),
            nu=np.asarray(nu, dtype=float).copy(),
            xdot=np.asarray(xdot, dtype=float).reshape(-1).copy(),
            n_v=max(float(np.linalg.norm(xdot)), floor),
        )
        self.entries.append(entry)
        return entry

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        thetas = np.stack([e.theta for e in self.entries])
        nus = np.stack([e.nu for e in self.entries])
        xdots = np.stack([e.xdot for e in self.entries])
        n_v = np.array([e.n_v for e in self.entries])
        return thetas, nus, xdots, n_v


def target_rows(targets: np.ndarray | None, m: int) -> np.ndarray:
    """Stacked coordinate rows covered by the chosen feature indices."""
    targets = np.asarray(targets if targets is not None else np.arange(m))
    return (3 * targets[:, None] + np.arange(3)[None, :]).reshape(-1)


def window_loss(model: RbfnModel, window: SlidingWindow, scale: np.ndarray,
                rows: np.ndarray) -> float:
    """Sum of squared normalized prediction errors over the window."""
    if len(window) == 0:
        return 0.0
    thetas, nus, xdots, n_v = window.arrays()
    us = nus * scale[None, :]
    preds = predict_velocity_batch(model, None, us, theta=thetas)
    err = (xdots[:, rows] - preds[:, rows]) / n_v[:, None]
    return float(np.sum(err**2))


def update_weights(
    model: RbfnModel,
    window: SlidingWindow,
    theta_now: np.ndarray,
    nu_now: np.ndarray,
    error_now: np.ndarray,
    scale: np.ndarray,
    config: AdaptConfig,
    dt_update: float,
    rows: np.ndarray,
) -> dict:
    """One Euler step of the adaptation law on the target rows.

    error_now is the clipped tracking error over target rows, ordered
    like `rows`. The reported gamma term is the nonpositive Lyapunov
    contribution -(gamma/T_w) sum |e/n_v|^2 at the pre-update weights.
    """
    if error_now.shape != rows.shape:
        raise ValueError("error_now must align with the target rows")
    q = model.neuron_count
    u_now = np.asarray(nu_now, dtype=float) * scale
    basis_now = (u_now[:, None] * theta_now[None, :]).reshape(-1)
    delta = np.outer(error_now, basis_now)

    gamma_term = 0.0
    if len(window) > 0 and config.window_weight > 0:
        thetas, nus, xdots, n_v = window.arrays()
        us = nus * scale[None, :]
        preds = predict_velocity_batch(model, None, us, theta=thetas)
        err = (xdots[:, rows] - preds[:, rows]) / n_v[:, None]
        gamma = config.window_weight / config.window_size
        gamma_term = -gamma * float(np.sum(err**2))
        basis = (us[:, :, None] * thetas[:, None, :]).reshape(len(window),
                                                              12 * q)
        # The window term is a gradient step on the window loss, and an
        # explicit Euler step of a gradient flow is only stable while
        # step * curvature < 2. The trace of the Gauss-Newton Hessian
        # bounds the curvature, so shrink the step when the bound would
        # be crossed; otherwise the prediction errors feed back on the
        # weights geometrically (low n_v windows make this easy to hit).
        curvature = gamma * float(
            np.sum((np.linalg.norm(basis, axis=1) / n_v) ** 2))
        step = dt_update * config.rate * curvature
        backoff = 1.0 if step <= 1.5 else 1.5 / step
        delta += backoff * gamma * ((err / n_v[:, None]).T @ basis)

    delta *= dt_update * config.rate
    if not np.all(np.isfinite(delta)):
        raise AdaptationError(
            f"non-finite weight update (|error|={np.linalg.norm(error_now):.3g}, "
            f"window={len(window)})")

    if not model.weights.flags["C_CONTIGUOUS"]:
        model.weights = np.ascontiguousarray(model.weights)
    w2 = model.weights.reshape(3 * model.feature_count, 12 * q)
    w2[rows] += delta
    return {
        "gamma_term": gamma_term,
        "update_norm": float(np.linalg.norm(delta)),
    }


class OnlineAdapter:
    """Owns the window and drives the substep updates during an episode.

    Call step() once per control tick with the freshly computed command;
    the adapter derives the backward-difference feature velocity from
    the previous observation and pairs it with the command that caused
    it before running the weight updates for this interval.
    """

    def __init__(self, model: RbfnModel, config: AdaptConfig, length: float,
                 targets: np.ndarray | None = None):
        config.validate()
        self.model = model
        self.config = config
        self.length = float(length)
        self.scale = model.velocity_scale(length)
        self.rows = target_rows(targets, model.feature_count)
        self.window = SlidingWindow(config.window_size)
        self._prev: tuple[float, np.ndarray, np.ndarray] | None = None

    def step(self, t: float, x: np.ndarray, r: np.ndarray, nu_cmd: np.ndarray,
             error_targets: np.ndarray, dt: float) -> dict:
        s = relative_state(x, r, normalize=self.model.scale_normalized)
        theta = activations(self.model, s[None, :])[0]
        if self._prev is not None:
            t_prev, x_prev, nu_prev = self._prev
            xdot = (np.asarray(x) - x_prev).reshape(-1) / (t - t_prev)
            self.window.push(t, theta, nu_prev, xdot,
                             self.config.velocity_floor)
        self._prev = (float(t), np.asarray(x, dtype=float).copy(),
                      np.asarray(nu_cmd, dtype=float).copy())

        dt_update = dt / self.config.substeps
        log = {"gamma_term": 0.0, "update_norm": 0.0}
        for _ in range(self.config.substeps):
            info = update_weights(self.model, self.window, theta, nu_cmd,
                                  error_targets, self.scale, self.config,
                                  dt_update, self.rows)
            log["gamma_term"] = info["gamma_term"]
            log["update_norm"] += info["update_norm"]
        log["window_loss"] = window_loss(self.model, self.window, self.scale,
                                         self.rows)
        log["window_fill"] = len(self.window)
        return log
