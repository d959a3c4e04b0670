"""Quasi-static elastic rod simulator.

A rod is a chain of n nodes with stretch springs on segments, a bending
penalty on the turning angle at interior nodes, and gravity. Both end
segments are clamped to gripper poses: node 0 sits at the left gripper
position, node 1 at one rest length along the gripper x axis, and
symmetrically for the right gripper. The manipulated state is always an
energy minimum over the free nodes; moving the grippers quasi-statically
drags the rod along the same equilibrium branch via warm starts.

The deformation Jacobian of feature velocities with respect to commanded
gripper velocities follows from the implicit function theorem at the
equilibrium and is exposed next to a central finite-difference version
used as its oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import quatmath
from .staterep import EndPose, EndVelocity, quat_rate_and_c

GRAVITY_DEFAULT = (0.0, 0.0, -9.81)
EX = np.array([1.0, 0.0, 0.0])


class RodSimError(RuntimeError):
    pass


class NonConvergenceError(RodSimError):
    """Equilibrium solve did not reach the gradient tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class InfeasibleClampError(RodSimError):
    """Gripper separation exceeds the stretched length cap."""


class SingularHessianError(RodSimError):
    """Free-node Hessian is singular or indefinite at the queried state."""


@dataclass
class DloParams:
    """Physical description of one cable: length in meters, diameter in mm.

    Stiffnesses and density may be overridden; by default the bending
    stiffness grows with the fourth power of the diameter, matching the
    cross-section area moment of a solid rod.
    """

    length: float
    diameter: float
    stretch_stiffness: float | None = None
    bend_stiffness: float | None = None
    linear_density: float | None = None

    def validate(self) -> None:
        if not (0.1 <= self.length <= 2.0):
            raise ValueError(f"length {self.length} outside [0.1, 2.0] m")
        if self.diameter <= 0.0:
            raise ValueError("diameter must be positive (millimeters)")


STRETCH_STIFFNESS_DEFAULT = 1.0e4
BEND_STIFFNESS_BASE = 1.0e-2  # at 10 mm diameter
LINEAR_DENSITY_DEFAULT = 0.05  # kg/m


@dataclass
class RodSystem:
    """Discretized rod: geometry, material constants, and solver settings."""

    node_count: int
    length: float
    diameter: float  # meters
    stretch_stiffness: float
    bend_stiffness: float
    linear_density: float
    gravity: np.ndarray = field(default_factory=lambda: np.array(GRAVITY_DEFAULT))
    planar: bool = False
    strain_cap: float = 0.5
    grad_tol: float = 1e-9

    @property
    def segment_rest_length(self) -> float:
        return self.length / (self.node_count - 1)

    @property
    def node_masses(self) -> np.ndarray:
        m = np.full(self.node_count, self.linear_density * self.segment_rest_length)
        m[0] *= 0.5
        m[-1] *= 0.5
        return m

    def free_coords(self) -> np.ndarray:
        """Sorted flat coordinate indices the solver may move.

        Nodes 0, 1, n-2, n-1 are clamped. In planar mode the z coordinate
        of every free node is fixed as well.
        """
        n = self.node_count
        free_nodes = np.arange(2, n - 2)
        coords = (3 * free_nodes[:, None] + np.arange(3)[None, :]).ravel()
        if self.planar:
            coords = coords[coords % 3 != 2]
        return coords

    def clamp_coords(self) -> np.ndarray:
        n = self.node_count
        nodes = np.array([0, 1, n - 2, n - 1])
        return (3 * nodes[:, None] + np.arange(3)[None, :]).ravel()


def make_rod(
    params: DloParams,
    node_count: int = 41,
    gravity: np.ndarray | tuple = GRAVITY_DEFAULT,
    planar: bool = False,
    strain_cap: float = 0.5,
) -> RodSystem:
    """Build a RodSystem from cable parameters with default material scaling."""
    params.validate()
    if node_count < 7:
        raise ValueError("node_count must be at least 7 (two clamped segments per end)")
    ks = params.stretch_stiffness
    kb = params.bend_stiffness
    rho = params.linear_density
    if ks is None:
        ks = STRETCH_STIFFNESS_DEFAULT
    if kb is None:
        kb = BEND_STIFFNESS_BASE * (params.diameter / 10.0) ** 4
    if rho is None:
        rho = LINEAR_DENSITY_DEFAULT
    return RodSystem(
        node_count=node_count,
        length=params.length,
        diameter=params.diameter / 1000.0,
        stretch_stiffness=ks,
        bend_stiffness=kb,
        linear_density=rho,
        gravity=np.asarray(gravity, dtype=float),
        planar=planar,
        strain_cap=strain_cap,
    )


# ---------------------------------------------------------------------------
# Energy, gradient, Hessian


def _bend_terms(cos_t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """theta^2 and its first two derivatives in c = cos(theta).

    g(c) = arccos(c)^2, g' = -2 theta / sin(theta),
    g'' = 2 (sin(theta) - theta cos(theta)) / sin(theta)^3,
    with series fallbacks near theta = 0.
    """
    c = np.clip(cos_t, -1.0 + 1e-12, 1.0)
    theta = np.arccos(c)
    small = theta < 1e-3
    sin_t = np.sin(theta)
    sin_safe = np.where(small, 1.0, sin_t)
    g = theta**2
    g1 = np.where(small, -2.0 * (1.0 + theta**2 / 6.0), -2.0 * theta / sin_safe)
    g2 = np.where(
        small,
        (2.0 / 3.0) * (1.0 + 0.4 * theta**2),
        2.0 * (sin_t - theta * c) / sin_safe**3,
    )
    return g, g1, g2


def total_energy(rod: RodSystem, nodes: np.ndarray) -> float:
    """Stretch + bend + gravity potential of a node configuration."""
    e = nodes[1:] - nodes[:-1]
    ln = np.linalg.norm(e, axis=1)
    l0 = rod.segment_rest_length
    stretch = rod.stretch_stiffness * np.sum((ln - l0) ** 2)
    u = e[:-1] / ln[:-1, None]
    v = e[1:] / ln[1:, None]
    g, _, _ = _bend_terms(np.sum(u * v, axis=1))
    bend = rod.bend_stiffness * np.sum(g)
    grav = -np.sum(rod.node_masses * (nodes @ rod.gravity))
    return float(stretch + bend + grav)


def energy_gradient(rod: RodSystem, nodes: np.ndarray) -> np.ndarray:
    """Gradient of total_energy with respect to all node coordinates, (n,3)."""
    n = rod.node_count
    e = nodes[1:] - nodes[:-1]
    ln = np.linalg.norm(e, axis=1)
    l0 = rod.segment_rest_length
    ehat = e / ln[:, None]

    grad = np.zeros((n, 3))
    ge = 2.0 * rod.stretch_stiffness * (ln - l0)[:, None] * ehat
    grad[:-1] -= ge
    grad[1:] += ge

    a = ln[:-1]
    b = ln[1:]
    u = ehat[:-1]
    v = ehat[1:]
    c = np.sum(u * v, axis=1)
    _, g1, _ = _bend_terms(c)
    kb = rod.bend_stiffness
    cu = (v - c[:, None] * u) / a[:, None]
    cv = (u - c[:, None] * v) / b[:, None]
    gu = kb * g1[:, None] * cu
    gv = kb * g1[:, None] * cv
    grad[0 : n - 2] -= gu
    grad[1 : n - 1] += gu - gv
    grad[2:n] += gv

    grad -= rod.node_masses[:, None] * rod.gravity[None, :]
    return grad


def energy_hessian(rod: RodSystem, nodes: np.ndarray) -> np.ndarray:
    """Dense Hessian of total_energy, shape (3n, 3n)."""
    n = rod.node_count
    e = nodes[1:] - nodes[:-1]
    ln = np.linalg.norm(e, axis=1)
    l0 = rod.segment_rest_length
    ehat = e / ln[:, None]
    eye = np.eye(3)

    h = np.zeros((3 * n, 3 * n))
    h4 = h.reshape(n, 3, n, 3)

    # Stretch: per-segment 3x3 block and its scatter onto the two nodes.
    ks = rod.stretch_stiffness
    outer = np.einsum("ni,nj->nij", ehat, ehat)
    he = 2.0 * ks * (outer + ((ln - l0) / ln)[:, None, None] * (eye - outer))
    seg = np.arange(n - 1)
    h4[seg, :, seg, :] += he
    h4[seg + 1, :, seg + 1, :] += he
    h4[seg, :, seg + 1, :] -= he
    h4[seg + 1, :, seg, :] -= he

    # Bending at interior nodes j = 1..n-2 over the segment pair (u, v).
    a = ln[:-1]
    b = ln[1:]
    u = ehat[:-1]
    v = ehat[1:]
    c = np.sum(u * v, axis=1)
    _, g1, g2 = _bend_terms(c)
    kb = rod.bend_stiffness

    cu = (v - c[:, None] * u) / a[:, None]
    cv = (u - c[:, None] * v) / b[:, None]
    uu = np.einsum("ni,nj->nij", u, u)
    vv = np.einsum("ni,nj->nij", v, v)
    uv = np.einsum("ni,nj->nij", u, v)
    vmu = v - c[:, None] * u  # a * cu
    umv = u - c[:, None] * v  # b * cv
    c_uu = -(
        np.einsum("ni,nj->nij", u, vmu)
        + np.einsum("ni,nj->nij", vmu, u)
        + c[:, None, None] * (eye - uu)
    ) / (a**2)[:, None, None]
    c_vv = -(
        np.einsum("ni,nj->nij", v, umv)
        + np.einsum("ni,nj->nij", umv, v)
        + c[:, None, None] * (eye - vv)
    ) / (b**2)[:, None, None]
    c_uv = (eye - vv - np.einsum("ni,nj->nij", u, umv)) / (a * b)[:, None, None]

    g1b = (kb * g1)[:, None, None]
    g2b = (kb * g2)[:, None, None]
    huu = g2b * np.einsum("ni,nj->nij", cu, cu) + g1b * c_uu
    hvv = g2b * np.einsum("ni,nj->nij", cv, cv) + g1b * c_vv
    huv = g2b * np.einsum("ni,nj->nij", cu, cv) + g1b * c_uv
    hvu = np.transpose(huv, (0, 2, 1))

    j = np.arange(1, n - 1)
    h4[j - 1, :, j - 1, :] += huu
    h4[j - 1, :, j, :] += huv - huu
    h4[j, :, j - 1, :] += hvu - huu
    h4[j - 1, :, j + 1, :] += -huv
    h4[j + 1, :, j - 1, :] += -hvu
    h4[j, :, j, :] += huu - huv - hvu + hvv
    h4[j, :, j + 1, :] += huv - hvv
    h4[j + 1, :, j, :] += hvu - hvv
    h4[j + 1, :, j + 1, :] += hvv
    return h


# ---------------------------------------------------------------------------
# Clamping and initial guesses


def clamp_positions(rod: RodSystem, ends: EndPose) -> np.ndarray:
    """Positions of the four clamped nodes [0, 1, n-2, n-1], shape (4,3)."""
    l0 = rod.segment_rest_length
    a1 = quatmath.rotate(ends.q1, EX)
    a2 = quatmath.rotate(ends.q2, EX)
    return np.stack([
        ends.p1,
        ends.p1 + l0 * a1,
        ends.p2 - l0 * a2,
        ends.p2,
    ])


def apply_clamp(rod: RodSystem, nodes: np.ndarray, ends: EndPose) -> np.ndarray:
    out = nodes.copy()
    n = rod.node_count
    out[[0, 1, n - 2, n - 1]] = clamp_positions(rod, ends)
    return out


def check_feasible(rod: RodSystem, ends: EndPose) -> None:
    sep = float(np.linalg.norm(ends.p2 - ends.p1))
    cap = rod.length * (1.0 + rod.strain_cap)
    if sep >= cap:
        raise InfeasibleClampError(
            f"gripper separation {sep:.4f} m exceeds stretched cap {cap:.4f} m"
        )


def initial_guess(rod: RodSystem, ends: EndPose) -> np.ndarray:
    """Straight chord between the grippers plus a slack-matched parabolic bow.

    The bow points along gravity when gravity is on; otherwise along a
    fixed transverse direction (in-plane +y for planar rods) so that
    compressed starts leave the unstable straight saddle deterministically.
    """
    n = rod.node_count
    t = np.linspace(0.0, 1.0, n)
    nodes = ends.p1[None, :] + t[:, None] * (ends.p2 - ends.p1)[None, :]
    d = float(np.linalg.norm(ends.p2 - ends.p1))
    slack = max(rod.length - d, 0.0)
    if slack > 0.0:
        amp = np.sqrt(3.0 * d * slack / 8.0)
        gn = np.linalg.norm(rod.gravity)
        if gn > 0.0 and not rod.planar:
            direction = rod.gravity / gn
        elif rod.planar:
            direction = np.array([0.0, 1.0, 0.0])
        else:
            direction = np.array([0.0, 0.0, -1.0])
        nodes += (4.0 * t * (1.0 - t) * amp)[:, None] * direction[None, :]
    return apply_clamp(rod, nodes, ends)


def make_initial_pose(length: float, separation_frac: float = 0.8,
                      center: np.ndarray | tuple = (0.0, 0.0, 0.0)) -> EndPose:
    """Grippers facing each other along x, identity orientations."""
    center = np.asarray(center, dtype=float)
    half = 0.5 * separation_frac * length
    return EndPose(
        p1=center + np.array([-half, 0.0, 0.0]),
        q1=quatmath.IDENTITY.copy(),
        p2=center + np.array([half, 0.0, 0.0]),
        q2=quatmath.IDENTITY.copy(),
    )


# ---------------------------------------------------------------------------
# Equilibrium solve


def solve_equilibrium(
    rod: RodSystem,
    ends: EndPose,
    warm_start: np.ndarray | None = None,
    tol: float | None = None,
    max_iter: int = 200,
) -> np.ndarray:
    """Minimize the rod energy over free nodes at fixed gripper poses.

    Damped Newton with Armijo backtracking; indefinite Hessians are
    regularized with an escalating diagonal shift and, failing that, a
    plain gradient step. Returns the full (n,3) node array with the
    clamped rows set from ``ends``.
    """
    ends.validate()
    check_feasible(rod, ends)
    if tol is None:
        tol = rod.grad_tol
    if warm_start is None:
        nodes = initial_guess(rod, ends)
    else:
        nodes = apply_clamp(rod, warm_start, ends)
    free = rod.free_coords()

    energy = total_energy(rod, nodes)
    flat = nodes.reshape(-1)
    residual = np.inf
    for it in range(max_iter):
        grad = energy_gradient(rod, nodes).reshape(-1)[free]
        residual = float(np.linalg.norm(grad))
        if residual < tol:
            return nodes
        hess = energy_hessian(rod, nodes)[np.ix_(free, free)]
        step_dir = _newton_direction(hess, grad)
        # Skip the line search deep in the quadratic-convergence region,
        # where energy differences fall below float64 resolution.
        if residual < 1e-6:
            flat[free] += step_dir
            energy = total_energy(rod, nodes)
            continue
        accepted = False
        slope = float(grad @ step_dir)
        alpha = 1.0
        for _ in range(60):
            trial = flat.copy()
            trial[free] += alpha * step_dir
            trial_energy = total_energy(rod, trial.reshape(nodes.shape))
            if trial_energy <= energy + 1e-4 * alpha * slope:
                flat[free] = trial[free]
                energy = trial_energy
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if residual < 1e-8:
                return nodes
            raise NonConvergenceError("line search stalled", residual, it)
    if residual < 1e-8:
        return nodes
    raise NonConvergenceError("iteration cap reached", residual, max_iter)


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    tau = 0.0
    scale = float(np.max(np.abs(np.diag(hess)))) or 1.0
    for _ in range(12):
        try:
            shifted = hess if tau == 0.0 else hess + tau * np.eye(hess.shape[0])
            cf = scipy.linalg.cho_factor(shifted, check_finite=False)
            return -scipy.linalg.cho_solve(cf, grad, check_finite=False)
        except scipy.linalg.LinAlgError:
            tau = 1e-8 * scale if tau == 0.0 else 10.0 * tau
    return -grad


def advance_ends(ends: EndPose, nu: np.ndarray | EndVelocity, dt: float) -> EndPose:
    """Integrate gripper poses one Euler step; quaternions renormalized."""
    if isinstance(nu, EndVelocity):
        nu = nu.as_vector()
    nu = np.asarray(nu, dtype=float)
    m1, m2, _ = quat_rate_and_c(ends.as_vector())
    return EndPose(
        p1=ends.p1 + dt * nu[0:3],
        q1=quatmath.normalize(ends.q1 + dt * (m1 @ nu[3:6])),
        p2=ends.p2 + dt * nu[6:9],
        q2=quatmath.normalize(ends.q2 + dt * (m2 @ nu[9:12])),
    )


def step(
    rod: RodSystem,
    nodes: np.ndarray,
    ends: EndPose,
    nu: np.ndarray | EndVelocity,
    dt: float,
    tol: float | None = None,
) -> tuple[np.ndarray, EndPose]:
    """Quasi-static step: move grippers at constant nu for dt, re-solve."""
    new_ends = advance_ends(ends, nu, dt)
    new_nodes = solve_equilibrium(rod, new_ends, warm_start=nodes, tol=tol)
    return new_nodes, new_ends


# ---------------------------------------------------------------------------
# Features and Jacobians


def feature_indices(node_count: int, m: int) -> np.ndarray:
    """m interior node indices, uniformly spaced by rounding a linspace
    over [0, n-1] and dropping both endpoints."""
    if m < 1 or m > node_count - 2:
        raise ValueError(f"m={m} must be in [1, {node_count - 2}]")
    idx = np.rint(np.linspace(0.0, node_count - 1, m + 2)).astype(int)[1:-1]
    if len(set(idx.tolist())) != m:
        raise ValueError(f"feature indices collide for n={node_count}, m={m}")
    return idx


def extract_features(rod: RodSystem, nodes: np.ndarray, m: int) -> np.ndarray:
    """Feature positions, shape (m,3)."""
    return nodes[feature_indices(rod.node_count, m)].copy()


def max_strain(rod: RodSystem, nodes: np.ndarray) -> float:
    """Largest signed segment strain (positive = stretched)."""
    ln = np.linalg.norm(nodes[1:] - nodes[:-1], axis=1)
    l0 = rod.segment_rest_length
    return float(np.max((ln - l0) / l0))


def _clamp_pose_jacobian(rod: RodSystem, ends: EndPose) -> np.ndarray:
    """12x14 derivative of the clamped node positions in the pose vector r."""
    l0 = rod.segment_rest_length
    d = np.zeros((12, 14))
    d[0:3, 0:3] = np.eye(3)
    d[3:6, 0:3] = np.eye(3)
    d[3:6, 3:7] = l0 * quatmath.rotated_vector_jacobian(ends.q1, EX)
    d[6:9, 7:10] = np.eye(3)
    d[6:9, 10:14] = -l0 * quatmath.rotated_vector_jacobian(ends.q2, EX)
    d[9:12, 7:10] = np.eye(3)
    return d


def ground_truth_jacobian(
    rod: RodSystem,
    nodes: np.ndarray,
    ends: EndPose,
    m: int,
) -> np.ndarray:
    """Deformation Jacobian (3m x 12) at an equilibrium via the implicit
    function theorem: feature velocities per unit commanded end velocity.

    Raises SingularHessianError when the free-node Hessian is not
    positive definite at the given state.
    """
    free = rod.free_coords()
    clamped = rod.clamp_coords()
    hess = energy_hessian(rod, nodes)
    a = hess[np.ix_(free, free)]
    b = hess[np.ix_(free, clamped)]
    _, _, cmap = quat_rate_and_c(ends.as_vector())
    clamp_vel = _clamp_pose_jacobian(rod, ends) @ cmap  # (12, 12)
    try:
        cf = scipy.linalg.cho_factor(a, check_finite=False)
    except scipy.linalg.LinAlgError as err:
        sep = float(np.linalg.norm(ends.p2 - ends.p1))
        raise SingularHessianError(
            f"free-node Hessian not positive definite (separation {sep:.4f} m)"
        ) from err
    sol = scipy.linalg.cho_solve(cf, b @ clamp_vel, check_finite=False)  # (F, 12)

    jac = np.zeros((3 * m, 12))
    feat = feature_indices(rod.node_count, m)
    for k, node in enumerate(feat):
        for axis in range(3):
            coord = 3 * node + axis
            pos = np.searchsorted(free, coord)
            if pos < len(free) and free[pos] == coord:
                jac[3 * k + axis] = -sol[pos]
    return jac


def fd_jacobian(
    rod: RodSystem,
    nodes: np.ndarray,
    ends: EndPose,
    m: int,
    eps: float = 1e-5,
    tol: float = 5e-12,
) -> np.ndarray:
    """Central finite-difference deformation Jacobian, the oracle for
    ground_truth_jacobian. Perturbs each velocity component as one Euler
    step of size +/- eps and re-solves tightly from the warm start."""
    cols = []
    for i in range(12):
        nu = np.zeros(12)
        nu[i] = 1.0
        xs = []
        for sign in (1.0, -1.0):
            pends = advance_ends(ends, nu, sign * eps)
            pnodes = solve_equilibrium(rod, pends, warm_start=nodes, tol=tol)
            xs.append(extract_features(rod, pnodes, m).reshape(-1))
        cols.append((xs[0] - xs[1]) / (2.0 * eps))
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# Convenience bundle


@dataclass
class Simulation:
    """A rod with its current equilibrium nodes and gripper poses."""

    rod: RodSystem
    ends: EndPose
    nodes: np.ndarray

    @classmethod
    def create(
        cls,
        params: DloParams,
        separation_frac: float = 0.8,
        node_count: int = 41,
        gravity: np.ndarray | tuple = GRAVITY_DEFAULT,
        planar: bool = False,
        tol: float | None = None,
    ) -> "Simulation":
        rod = make_rod(params, node_count=node_count, gravity=gravity, planar=planar)
        ends = make_initial_pose(params.length, separation_frac)
        nodes = solve_equilibrium(rod, ends, tol=tol)
        return cls(rod=rod, ends=ends, nodes=nodes)

    def features(self, m: int) -> np.ndarray:
        return extract_features(self.rod, self.nodes, m)

    def step(self, nu: np.ndarray | EndVelocity, dt: float, tol: float | None = None) -> None:
        self.nodes, self.ends = step(self.rod, self.nodes, self.ends, nu, dt, tol=tol)

    def jacobian(self, m: int) -> np.ndarray:
        return ground_truth_jacobian(self.rod, self.nodes, self.ends, m)

    def copy(self) -> "Simulation":
        return Simulation(rod=self.rod, ends=self.ends.copy(), nodes=self.nodes.copy())
