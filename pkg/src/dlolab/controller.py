"""Shape-servo controller built on the learned deformation Jacobian.

Each control step clips the task-space error to a trust radius, asks for
an ideal feature velocity proportional to it, and solves a small convex
QCQP for the commanded end velocity: damped least squares subject to a
velocity-norm ball, an optional no-separation half space, and optional
frozen coordinates (angular lock during near-overstretch, workspace DoF
masks). Choosing nu = 0 is always feasible, which yields the descent
property error . J nu <= 0 at every step.

The QCQP is solved exactly by enumerating the four activity patterns of
(half space, ball) after eliminating fixed coordinates; a projected
gradient solver on the raw 12-dimensional problem serves as the
independent reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .rbfn import RbfnModel, predict_jacobian


@dataclass
class ControllerConfig:
    gain: float = 1.0                 # alpha on the clipped error
    damping0: float = 0.1             # lambda scales with the error norm
    error_clip: float = 0.2           # trust radius on the stacked error, meters
    straightness_margin: float = 2e-3  # cosine margin of the overstretch guard
    nu_max: float = 0.2
    overstretch_guard: bool = True
    targets: tuple[int, ...] | None = None   # feature indices; None = all
    dof_mask: tuple[int, ...] | None = None  # 12 booleans; None = all free

    def validate(self, m: int) -> None:
        if self.gain <= 0 or self.nu_max <= 0 or self.error_clip <= 0:
            raise ValueError("gain, nu_max, error_clip must be positive")
        if self.damping0 < 0:
            raise ValueError("damping0 must be nonnegative")
        if self.targets is not None:
            if len(self.targets) == 0 or any(not 0 <= t < m for t in self.targets):
                raise ValueError(f"targets must index features 0..{m - 1}")
        if self.dof_mask is not None and len(self.dof_mask) != 12:
            raise ValueError("dof_mask needs 12 entries")


def planar_dof_mask() -> tuple[int, ...]:
    """Tabletop mask: planar translations plus yaw only."""
    return (1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0, 1)


def saturate_error(delta: np.ndarray, clip: float) -> np.ndarray:
    """Scale the stacked error down to the trust radius if needed."""
    norm = float(np.linalg.norm(delta))
    if norm <= clip or norm == 0.0:
        return delta.copy()
    return delta * (clip / norm)


def overstretch_constraints(
    x: np.ndarray, r: np.ndarray, margin: float
) -> tuple[np.ndarray, np.ndarray] | None:
    """Half-space and angular-lock constraints when the chain is
    near-straight: every consecutive feature segment pair must have
    cosine above 1 - margin for the guard to arm. Returns (c1, c2) or
    None when the rod is still safely bent."""
    seg = x[1:] - x[:-1]
    norms = np.linalg.norm(seg, axis=1)
    if np.any(norms < 1e-12):
        return None
    unit = seg / norms[:, None]
    cosines = np.sum(unit[:-1] * unit[1:], axis=1)
    if not np.all(cosines > 1.0 - margin):
        return None
    p_dir = r[7:10] - r[0:3]
    p_norm = float(np.linalg.norm(p_dir))
    if p_norm < 1e-12:
        return None
    p_dir = p_dir / p_norm
    c1 = np.concatenate([-p_dir, np.zeros(3), p_dir, np.zeros(3)])
    c2 = np.zeros((6, 12))
    for row, col in enumerate((3, 4, 5, 9, 10, 11)):
        c2[row, col] = 1.0
    return c1, c2


# ---------------------------------------------------------------------------
# QCQP


def solve_control_qcqp(
    jac: np.ndarray,
    xdot_ide: np.ndarray,
    damping: float,
    nu_max: float,
    c1: np.ndarray | None = None,
    c2: np.ndarray | None = None,
    dof_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Minimize 0.5 ||xdot_ide - J nu||^2 + 0.5 damping ||nu||^2 subject to
    ||nu|| <= nu_max, c1 . nu <= 0, c2 nu = 0, and masked coordinates zero.

    Exact activity-pattern enumeration; returns (nu, info) where info
    carries the active set, multipliers, objective, and KKT residual.
    """
    if damping < 0 or nu_max <= 0:
        raise ValueError("need damping >= 0 and nu_max > 0")
    rows = []
    if c2 is not None:
        rows.append(np.atleast_2d(np.asarray(c2, dtype=float)))
    if dof_mask is not None:
        mask = np.asarray(dof_mask, dtype=bool)
        fixed = np.flatnonzero(~mask)
        if fixed.size:
            sel = np.zeros((fixed.size, 12))
            sel[np.arange(fixed.size), fixed] = 1.0
            rows.append(sel)
    if rows:
        basis = scipy.linalg.null_space(np.vstack(rows))
    else:
        basis = np.eye(12)
    if basis.shape[1] == 0:
        nu = np.zeros(12)
        return nu, _summarize(jac, xdot_ide, damping, nu_max, c1, c2, dof_mask,
                              nu, active=("all-fixed",))

    a = jac @ basis
    c_red = None
    if c1 is not None:
        c_red = basis.T @ np.asarray(c1, dtype=float)
        if np.linalg.norm(c_red) < 1e-12:
            c_red = None

    y, active = _solve_reduced(a, xdot_ide, damping, nu_max, c_red)
    nu = basis @ y
    return nu, _summarize(jac, xdot_ide, damping, nu_max, c1, c2, dof_mask,
                          nu, active=active)


def _solve_reduced(a, b, lam, radius, c):
    """Active-set enumeration in the reduced coordinates."""
    scale = float(np.linalg.norm(a.T @ b)) + lam * radius + 1.0
    feas = 1e-9 * max(1.0, radius)
    stat_tol = 1e-9 * scale

    def grad(y):
        return a.T @ (a @ y - b) + lam * y

    # 1: everything inactive.
    y = _ridge(a, b, lam)
    if np.linalg.norm(y) <= radius + feas and (c is None or c @ y <= stat_tol):
        return y, ()

    # 2: half space active, ball inactive.
    if c is not None:
        zc = scipy.linalg.null_space(c[None, :])
        y = zc @ _ridge(a @ zc, b, lam)
        mu = -float(c @ grad(y)) / float(c @ c)
        if mu >= -stat_tol and np.linalg.norm(y) <= radius + feas:
            return y, ("halfspace",)

    # 3: ball active, half space inactive.
    y, rho = _trs(a, b, lam, radius)
    if c is None or c @ y <= stat_tol:
        return y, ("ball",)

    # 4: both active.
    zc = scipy.linalg.null_space(c[None, :])
    y2, rho = _trs(a @ zc, b, lam, radius)
    y = zc @ y2
    mu = -float(c @ (grad(y) + rho * y)) / float(c @ c)
    return y, ("halfspace", "ball")


def _ridge(a, b, lam):
    if a.shape[1] == 0:
        return np.zeros(0)
    if lam > 0.0:
        return np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ b)
    return np.linalg.lstsq(a, b, rcond=None)[0]


def _trs(a, b, lam, radius):
    """Ball-constrained ridge: returns (y, rho) with rho >= 0 the ball
    multiplier such that (A^T A + (lam + rho) I) y = A^T b, ||y|| = radius
    whenever the unconstrained solution is outside."""
    if a.shape[1] == 0:
        return np.zeros(0), 0.0
    gram = a.T @ a
    d, q = np.linalg.eigh(gram)
    beta = q.T @ (a.T @ b)

    def norm_at(rho):
        denom = d + lam + rho
        safe = np.where(denom > 0, denom, np.inf)
        return float(np.sqrt(np.sum((beta / safe) ** 2)))

    if norm_at(0.0) <= radius:
        denom = d + lam
        if np.all(denom > 0):
            return q @ (beta / denom), 0.0
        # Singular and interior: fall back to the min-norm solution.
        y = np.linalg.lstsq(a, b, rcond=None)[0] if lam == 0 else q @ (
            beta / np.where(denom > 0, denom, 1.0) * (denom > 0)
        )
        return y, 0.0

    lo, hi = 0.0, float(np.linalg.norm(beta)) / radius + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm_at(mid) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16 * (1.0 + hi):
            break
    rho = 0.5 * (lo + hi)
    y = q @ (beta / (d + lam + rho))
    # Polish the radius exactly to counter bisection truncation.
    n = np.linalg.norm(y)
    if n > 0:
        y *= radius / n
    return y, rho


def _summarize(jac, b, lam, radius, c1, c2, dof_mask, nu, active):
    resid = jac @ nu - b
    objective = 0.5 * float(resid @ resid) + 0.5 * lam * float(nu @ nu)
    return {
        "active": active,
        "objective": objective,
        "kkt_residual": kkt_residual(jac, b, lam, radius, c1, c2, dof_mask, nu),
        "nu_norm": float(np.linalg.norm(nu)),
    }


def kkt_residual(jac, b, lam, radius, c1, c2, dof_mask, nu) -> float:
    """Stationarity + complementarity + feasibility violation of a
    candidate solution, measured on the original 12-dim problem."""
    g = jac.T @ (jac @ nu - b) + lam * nu
    n = float(np.linalg.norm(nu))

    rows = [np.zeros((0, 12))]
    if c2 is not None:
        rows.append(np.atleast_2d(c2))
    if dof_mask is not None:
        mask = np.asarray(dof_mask, dtype=bool)
        fixed = np.flatnonzero(~mask)
        sel = np.zeros((fixed.size, 12))
        sel[np.arange(fixed.size), fixed] = 1.0
        rows.append(sel)
    eq = np.vstack(rows)

    # Multipliers via least squares on the stationarity condition:
    # g + rho nu + mu c1 + eq^T xi = 0, rho, mu >= 0.
    cols = []
    labels = []
    if n > 1e-12:
        cols.append(nu[:, None])
        labels.append("rho")
    if c1 is not None:
        cols.append(np.asarray(c1, dtype=float)[:, None])
        labels.append("mu")
    if eq.shape[0]:
        cols.append(eq.T)
    mat = np.hstack(cols) if cols else np.zeros((12, 0))
    if mat.shape[1]:
        mults, *_ = np.linalg.lstsq(mat, -g, rcond=None)
    else:
        mults = np.zeros(0)
    stationarity = float(np.linalg.norm(g + (mat @ mults if mat.shape[1] else 0.0)))

    comp = 0.0
    k = 0
    if "rho" in labels:
        rho = max(mults[k], 0.0)
        comp += abs(mults[k] - rho)  # negative multiplier counts as violation
        comp += abs(rho * (n - radius))
        k += 1
    if "mu" in labels:
        mu = max(mults[k], 0.0)
        comp += abs(mults[k] - mu)
        comp += abs(mu * float(np.asarray(c1) @ nu))
        k += 1

    feas = max(0.0, n - radius)
    if c1 is not None:
        feas += max(0.0, float(np.asarray(c1) @ nu))
    if eq.shape[0]:
        feas += float(np.linalg.norm(eq @ nu))
    return stationarity + comp + feas


def projected_gradient_reference(
    jac: np.ndarray,
    xdot_ide: np.ndarray,
    damping: float,
    nu_max: float,
    c1: np.ndarray | None = None,
    c2: np.ndarray | None = None,
    dof_mask: np.ndarray | None = None,
    iterations: int = 30_000,
) -> np.ndarray:
    """Independent reference for solve_control_qcqp.

    Plain projected gradient on the raw problem. The projection onto
    (subspace) then (half space) then (ball) composes exactly because
    both the half space and the ball pass through / are centered on the
    origin and each later step preserves the earlier constraints.
    """
    proj_sub = np.eye(12)
    rows = []
    if c2 is not None:
        rows.append(np.atleast_2d(np.asarray(c2, dtype=float)))
    if dof_mask is not None:
        mask = np.asarray(dof_mask, dtype=bool)
        fixed = np.flatnonzero(~mask)
        if fixed.size:
            sel = np.zeros((fixed.size, 12))
            sel[np.arange(fixed.size), fixed] = 1.0
            rows.append(sel)
    if rows:
        e = np.vstack(rows)
        proj_sub = np.eye(12) - np.linalg.pinv(e) @ e

    c_sub = proj_sub @ np.asarray(c1, dtype=float) if c1 is not None else None
    if c_sub is not None and np.linalg.norm(c_sub) < 1e-12:
        c_sub = None

    def project(v):
        v = proj_sub @ v
        if c_sub is not None:
            viol = float(c_sub @ v)
            if viol > 0.0:
                v = v - viol / float(c_sub @ c_sub) * c_sub
        norm = np.linalg.norm(v)
        if norm > nu_max:
            v = v * (nu_max / norm)
        return v

    lip = float(np.linalg.norm(jac, 2) ** 2 + damping)
    step = 1.0 / max(lip, 1e-12)
    y = np.zeros(12)
    for _ in range(iterations):
        g = jac.T @ (jac @ y - xdot_ide) + damping * y
        y = project(y - step * g)
    return y


# ---------------------------------------------------------------------------
# Control step


@dataclass
class ControlResult:
    nu: np.ndarray
    error: np.ndarray          # clipped stacked error actually served
    error_norm: float          # unclipped stacked error norm
    descent: float             # error . (J_c nu); nonpositive by design
    near_overstretch: bool
    qcqp: dict = field(default_factory=dict)


def command_from_jacobian(
    jac_c: np.ndarray,
    delta_full: np.ndarray,
    config: ControllerConfig,
    c1: np.ndarray | None = None,
    c2: np.ndarray | None = None,
    near_overstretch: bool = False,
) -> ControlResult:
    """Run the command law given a target-row Jacobian and raw error.

    Shared by the learned controller and the estimation baselines so
    comparisons differ only in where the Jacobian comes from.
    """
    error_norm = float(np.linalg.norm(delta_full))
    delta = saturate_error(delta_full, config.error_clip)
    xdot_ide = -config.gain * delta
    damping = config.damping0 * float(np.linalg.norm(delta))
    mask = (np.asarray(config.dof_mask, dtype=bool)
            if config.dof_mask is not None else None)
    nu, info = solve_control_qcqp(jac_c, xdot_ide, damping, config.nu_max,
                                  c1=c1, c2=c2, dof_mask=mask)
    return ControlResult(
        nu=nu,
        error=delta,
        error_norm=error_norm,
        descent=float(delta @ (jac_c @ nu)),
        near_overstretch=near_overstretch,
        qcqp=info,
    )


def target_error(x_obs: np.ndarray, x_des: np.ndarray,
                 targets: np.ndarray) -> np.ndarray:
    return (x_obs - x_des)[targets].reshape(-1)


def control_step(
    model: RbfnModel,
    x_obs: np.ndarray,
    r: np.ndarray,
    length: float,
    x_des: np.ndarray,
    config: ControllerConfig,
) -> ControlResult:
    """One velocity command from observed features toward desired ones."""
    m = model.feature_count
    config.validate(m)
    targets = np.asarray(config.targets if config.targets is not None else range(m))

    jac = predict_jacobian(model, x_obs, r, length)
    rows = (3 * targets[:, None] + np.arange(3)[None, :]).reshape(-1)
    jac_c = jac[rows]

    c1 = c2 = None
    near = False
    if config.overstretch_guard:
        guard = overstretch_constraints(x_obs, r, config.straightness_margin)
        if guard is not None:
            c1, c2 = guard
            near = True

    return command_from_jacobian(jac_c, target_error(x_obs, x_des, targets),
                                 config, c1=c1, c2=c2, near_overstretch=near)
