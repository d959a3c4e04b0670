"""Comparison methods sharing the episode protocol of the main controller.

* WLS: an online Jacobian estimate from a decaying sliding window of
  (feature displacement, end displacement) pairs, plugged into the same
  command law.
* MPPI: sampling-based planning over the learned model with
  information-theoretic weighting of rollout costs.
* Naive P: the pseudoinverse proportional law with no damping and no
  speed limit, kept deliberately fragile near singular Jacobians.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import quatmath
from .rbfn import RbfnModel, activations
from .staterep import relative_state_batch


def naive_p_command(jac_c: np.ndarray, delta: np.ndarray,
                    gain: float) -> np.ndarray:
    """nu = -gain * pinv(J_c) delta; unclamped on purpose."""
    return -gain * (np.linalg.pinv(jac_c) @ delta)


# ---------------------------------------------------------------------------
# WLS


@dataclass
class WlsConfig:
    window_size: int = 50
    decay: float = 0.95          # weight factor per step of age
    probe_speed: float = 0.05    # m/s (rad/s) for initialization probes
    ridge: float = 1e-8          # relative shift when the window is rank deficient

    def validate(self) -> None:
        if self.window_size < 12:
            raise ValueError("window must hold at least 12 pairs")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")


class WlsEstimator:
    """Weighted least squares fit of dx = J dr over a sliding window."""

    def __init__(self, feature_count: int, config: WlsConfig):
        config.validate()
        self.m = feature_count
        self.config = config
        self.window: deque[tuple[np.ndarray, np.ndarray]] = deque(
            maxlen=config.window_size)

    def push(self, dx: np.ndarray, dr: np.ndarray) -> None:
        self.window.append((np.asarray(dx, dtype=float).reshape(-1).copy(),
                            np.asarray(dr, dtype=float).copy()))

    @property
    def valid(self) -> bool:
        return len(self.window) >= 12

    def estimate(self) -> np.ndarray:
        """Current (3m, 12) Jacobian estimate."""
        if not self.window:
            raise ValueError("empty window")
        xs = np.stack([dx for dx, _ in self.window])
        rs = np.stack([dr for _, dr in self.window])
        ages = np.arange(len(self.window) - 1, -1, -1, dtype=float)
        w = self.config.decay**ages
        gram = (rs * w[:, None]).T @ rs
        cross = (rs * w[:, None]).T @ xs
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            # trace can be ~0 too (window full of zero commands while
            # parked at the goal), so keep an absolute floor as well
            gram = gram + self.config.ridge * (np.trace(gram) / 12 + 1e-12
                                               ) * np.eye(12)
        return np.linalg.solve(gram, cross).T


def wls_initialize(step_fn, x0: np.ndarray, dt: float,
                   config: WlsConfig) -> tuple[WlsEstimator, float]:
    """Fill an estimator by probing each end DoF once.

    step_fn(nu) advances the plant one control period and returns the
    new feature array; probes run back to back, so the elapsed time is
    12 * dt. Raises on a zero probe speed.
    """
    if config.probe_speed == 0.0:
        raise ValueError("probe speed must be nonzero")
    est = WlsEstimator(np.asarray(x0).shape[0], config)
    x_prev = np.asarray(x0, dtype=float).copy()
    for dof in range(12):
        nu = np.zeros(12)
        nu[dof] = config.probe_speed
        x_new = np.asarray(step_fn(nu), dtype=float)
        est.push((x_new - x_prev).reshape(-1), nu * dt)
        x_prev = x_new.copy()
    return est, 12 * dt


# ---------------------------------------------------------------------------
# MPPI


@dataclass
class MppiConfig:
    samples: int = 1000        # K rollouts per replan
    horizon: int = 10          # steps per rollout
    noise_std: float = 0.05    # per velocity component
    temperature: float = 0.1
    action_cost: float = 0.01
    nu_max: float = 0.2

    def validate(self) -> None:
        if self.samples < 1 or self.horizon < 1:
            raise ValueError("samples and horizon must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.noise_std < 0 or self.nu_max <= 0:
            raise ValueError("noise_std >= 0 and nu_max > 0 required")


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray | None:
    """Softmax of -cost/temperature; infinite costs get zero weight.

    Subtracting the minimum finite cost keeps the exponentials in range
    and makes the weights invariant to constant cost offsets. Returns
    None when every rollout is invalid.
    """
    finite = np.isfinite(costs)
    if not finite.any():
        return None
    shifted = costs - np.min(costs[finite])
    w = np.where(finite, np.exp(-shifted / temperature), 0.0)
    return w / np.sum(w)


def clamp_to_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Scale vectors along the last axis into the norm ball."""
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    factor = np.where(norms > radius, radius / np.maximum(norms, 1e-30), 1.0)
    return v * factor


def advance_poses(rs: np.ndarray, nus: np.ndarray, dt: float) -> np.ndarray:
    """Batched end-pose integration, Euler plus renormalization.

    Must agree with the single-pose stepping used by the simulator so
    planned and executed trajectories line up.
    """
    out = rs.copy()
    out[:, 0:3] += nus[:, 0:3] * dt
    out[:, 7:10] += nus[:, 6:9] * dt
    for q_sl, w_sl in ((slice(3, 7), slice(3, 6)),
                       (slice(10, 14), slice(9, 12))):
        q = rs[:, q_sl]
        omega4 = np.concatenate(
            [np.zeros((len(rs), 1)), nus[:, w_sl]], axis=1)
        qn = q + 0.5 * dt * quatmath.multiply(omega4.T, q.T).T
        out[:, q_sl] = qn / np.linalg.norm(qn, axis=1, keepdims=True)
    return out


class MppiPlanner:
    """Sampling MPC on the learned model with a shifted warm start.

    Rollouts run in float32 through a pre-transposed weight matrix; a
    rollout is discarded once its state leaves the valid set (end
    separation above the rod length, or a degenerate chain).
    """

    def __init__(self, model: RbfnModel, length: float, config: MppiConfig,
                 seed: int = 0):
        config.validate()
        self.model = model
        self.length = float(length)
        self.config = config
        self.scale = model.velocity_scale(length)
        m, q = model.feature_count, model.neuron_count
        w3 = model.weights.reshape(3 * m, 12, q)
        self.wq = np.ascontiguousarray(
            w3.transpose(2, 0, 1).reshape(q, 3 * m * 12), dtype=np.float32)
        self.nominal = np.zeros((config.horizon, 12))
        self.rng = np.random.default_rng(seed)

    def _states_ok(self, xs: np.ndarray, rs: np.ndarray) -> np.ndarray:
        tol = 1e-8
        sep = np.linalg.norm(rs[:, 7:10] - rs[:, 0:3], axis=1)
        ok = (sep <= self.length) & (sep > tol)
        ok &= np.linalg.norm(xs[:, 0] - rs[:, 0:3], axis=1) > tol
        seg = np.linalg.norm(xs[:, 1:] - xs[:, :-1], axis=2)
        ok &= np.all(seg > tol, axis=1)
        return ok

    def plan(self, x: np.ndarray, r: np.ndarray, x_des: np.ndarray,
             dt: float) -> np.ndarray:
        cfg = self.config
        k, t_h = cfg.samples, cfg.horizon
        m = self.model.feature_count

        actions = self.nominal[None] + self.rng.normal(
            size=(k, t_h, 12)) * cfg.noise_std
        actions = clamp_to_ball(actions, cfg.nu_max)

        xs = np.repeat(x[None], k, axis=0)
        rs = np.repeat(r[None], k, axis=0)
        valid = np.ones(k, dtype=bool)
        cost = cfg.action_cost * np.sum(actions**2, axis=(1, 2))
        des = x_des.reshape(-1)

        for t in range(t_h):
            valid &= self._states_ok(xs, rs)
            idx = np.flatnonzero(valid)
            if idx.size == 0:
                break
            s = relative_state_batch(xs[idx], rs[idx],
                                     normalize=self.model.scale_normalized)
            theta = activations(self.model, s).astype(np.float32)
            per_dof = (theta @ self.wq).reshape(idx.size, 3 * m, 12)
            u = (actions[idx, t] * self.scale[None, :]).astype(np.float32)
            xdot = np.einsum("bri,bi->br", per_dof, u)
            xs[idx] += (xdot.astype(np.float64) * dt).reshape(-1, m, 3)
            rs[idx] = advance_poses(rs[idx], actions[idx, t], dt)
            diff = xs[idx].reshape(idx.size, -1) - des[None, :]
            cost[idx] += np.sum(diff**2, axis=1)
        valid &= self._states_ok(xs, rs)

        w = mppi_weights(np.where(valid, cost, np.inf), cfg.temperature)
        if w is None:
            self.nominal = np.vstack([self.nominal[1:], np.zeros((1, 12))])
            return np.zeros(12)
        plan = np.einsum("k,ktj->tj", w, actions)
        self.nominal = np.vstack([plan[1:], np.zeros((1, 12))])
        return clamp_to_ball(plan[0], cfg.nu_max)
