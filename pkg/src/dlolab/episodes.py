"""Closed-loop control episodes with a shared protocol across methods.

Every method gets the same plant, the same observation stream, the same
time budget, and the same metrics. Methods differ only in how the
command is produced:

* "ours": learned Jacobian + QCQP law, online adaptation on.
* "ours-noadapt": same with frozen weights.
* "wls": online weighted-least-squares Jacobian + the same QCQP law.
* "mppi": sampling MPC over the learned model.
* "naive-p": pseudoinverse proportional law on the learned Jacobian.

Episodes truncate when the quasi-static solver fails (for example after
a wild command tears the clamps apart); the error then freezes at its
last value and the episode counts as a failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptConfig, AdaptationError, OnlineAdapter
from .baselines import (
    MppiConfig,
    MppiPlanner,
    WlsConfig,
    naive_p_command,
    wls_initialize,
)
from .controller import (
    ControllerConfig,
    command_from_jacobian,
    control_step,
    overstretch_constraints,
    saturate_error,
    target_error,
)
from .datasets import Workspace
from .metrics import EpisodeResult, finish_episode, relative_deformation, translation
from .rbfn import RbfnModel, predict_jacobian
from .rodsim import (
    DloParams,
    GRAVITY_DEFAULT,
    RodSimError,
    Simulation,
    make_rod,
    max_strain,
    solve_equilibrium,
    extract_features,
)
from .staterep import DegenerateStateError

METHODS = ("ours", "ours-noadapt", "wls", "mppi", "naive-p")


@dataclass
class EpisodeConfig:
    method: str = "ours"
    duration: float = 30.0
    dt: float = 0.1
    feature_count: int = 8
    noise_std: float = 0.0          # observation noise on features, meters
    separation_frac: float = 0.8    # initial end separation / length
    mode: str = "3d"
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    mppi: MppiConfig = field(default_factory=MppiConfig)
    wls: WlsConfig = field(default_factory=WlsConfig)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.mode not in ("2d", "3d"):
            raise ValueError(f"mode must be '2d' or '3d', got {self.mode!r}")


def _planar_setup(params: DloParams, mode: str, node_count: int = 41):
    planar = mode == "2d"
    gravity = (0.0, 0.0, 0.0) if planar else GRAVITY_DEFAULT
    return planar, make_rod(params, node_count=node_count, gravity=gravity,
                            planar=planar)


def desired_shape_pool(params: DloParams, count: int, seed: int,
                       feature_count: int = 8, mode: str = "3d") -> np.ndarray:
    """Random feasible goal shapes: equilibria at sampled end poses.

    Returns (count, m, 3). Every shape is an actual equilibrium of the
    same rod, so each task is achievable in principle.
    """
    planar, rod = _planar_setup(params, mode)
    ws = Workspace.for_rod(params.length)
    rng = np.random.default_rng(seed)
    from .staterep import EndPose  # local import to avoid cycle noise

    shapes = []
    attempts = 0
    while len(shapes) < count:
        attempts += 1
        if attempts > 50 * count:
            raise RuntimeError("could not sample enough goal shapes")
        p1, p2 = ws.sample_positions(rng, planar=planar)
        q1 = ws.sample_orientation(rng, planar=planar)
        q2 = ws.sample_orientation(rng, planar=planar)
        ends = EndPose(p1=p1, q1=q1, p2=p2, q2=q2)
        try:
            nodes = solve_equilibrium(rod, ends)
        except RodSimError:
            continue
        shapes.append(extract_features(rod, nodes, feature_count))
    return np.stack(shapes)


def stretched_target(params: DloParams, feature_count: int = 8,
                     factor: float = 1.3, node_count: int = 41) -> np.ndarray:
    """A straight, deliberately unreachable goal shape.

    Features lie on a line as if the rod were stretched so the clamp
    chord equals factor * length; any controller chasing it keeps
    pulling the ends apart until something stops it.
    """
    from .rodsim import feature_indices

    idx = feature_indices(node_count, feature_count)
    span = factor * params.length
    positions = (idx / (node_count - 1) - 0.5) * span
    target = np.zeros((feature_count, 3))
    target[:, 0] = positions
    return target


def run_episode(
    params: DloParams,
    x_des: np.ndarray,
    config: EpisodeConfig,
    seed: int,
    model: RbfnModel | None = None,
) -> EpisodeResult:
    config.validate()
    if config.method != "wls" and model is None:
        raise ValueError(f"method {config.method!r} needs a model")

    rng = np.random.default_rng(seed)
    m = config.feature_count
    length = params.length
    planar = config.mode == "2d"
    sim = Simulation.create(
        params, separation_frac=config.separation_frac, planar=planar,
        gravity=(0.0, 0.0, 0.0) if planar else GRAVITY_DEFAULT)
    ctrl = config.controller
    ctrl.validate(m)
    targets = np.asarray(ctrl.targets if ctrl.targets is not None
                         else range(m))
    rows = (3 * targets[:, None] + np.arange(3)[None, :]).reshape(-1)

    def observe() -> np.ndarray:
        x = sim.features(m)
        if config.noise_std > 0:
            x = x + rng.normal(size=x.shape) * config.noise_std
        return x

    adapter = None
    planner = None
    estimator = None
    init_time = 0.0
    if config.method == "ours":
        model = model.copy()  # adaptation mutates weights
        adapter = OnlineAdapter(model, config.adapt, length, targets=targets)
    elif config.method == "mppi":
        planner = MppiPlanner(model, length, config.mppi,
                              seed=int(rng.integers(2**31)))
    elif config.method == "wls":
        # Probes run before the clock starts; their duration is
        # reported separately, matching how initialization cost is
        # usually tabulated.
        estimator, init_time = wls_initialize(
            lambda nu: (sim.step(nu, config.dt), observe())[1],
            observe(), config.dt, config.wls)

    x0 = sim.features(m)
    result = EpisodeResult(
        method=config.method,
        seed=seed,
        final_error=float("nan"),
        success=False,
        time_to_success=None,
        translation_to_goal=translation(x0, x_des),
        deformation_to_goal=relative_deformation(x0, x_des),
        extra={"init_time": init_time},
    )

    def true_error() -> float:
        return float(np.linalg.norm(target_error(sim.features(m), x_des,
                                                 targets)))

    steps = int(round(config.duration / config.dt))
    x_obs_prev: np.ndarray | None = None
    nu_prev = np.zeros(12)
    gamma_violations = 0
    strain_trace: list[float] = []

    for k in range(steps):
        t = k * config.dt
        x_obs = observe()
        r_vec = sim.ends.as_vector()
        result.times.append(t)
        result.error_trace.append(true_error())

        try:
            if config.method in ("ours", "ours-noadapt"):
                res = control_step(model, x_obs, r_vec, length, x_des, ctrl)
                nu = res.nu
                if res.descent > 1e-9:
                    result.descent_violations += 1
                if adapter is not None:
                    log = adapter.step(t, x_obs, r_vec, nu, res.error,
                                       config.dt)
                    if log["gamma_term"] > 1e-12:
                        gamma_violations += 1
            elif config.method == "wls":
                if x_obs_prev is not None:
                    estimator.push((x_obs - x_obs_prev).reshape(-1),
                                   nu_prev * config.dt)
                jac_c = estimator.estimate()[rows]
                c1 = c2 = None
                near = False
                if ctrl.overstretch_guard:
                    guard = overstretch_constraints(
                        x_obs, r_vec, ctrl.straightness_margin)
                    if guard is not None:
                        c1, c2 = guard
                        near = True
                res = command_from_jacobian(
                    jac_c, target_error(x_obs, x_des, targets), ctrl,
                    c1=c1, c2=c2, near_overstretch=near)
                nu = res.nu
            elif config.method == "mppi":
                nu = planner.plan(x_obs, r_vec, x_des, config.dt)
            else:  # naive-p
                jac_c = predict_jacobian(model, x_obs, r_vec, length)[rows]
                delta = saturate_error(
                    target_error(x_obs, x_des, targets), ctrl.error_clip)
                nu = naive_p_command(jac_c, delta, ctrl.gain)
        except (AdaptationError, DegenerateStateError) as exc:
            result.truncated = True
            result.extra["failure"] = str(exc)
            break

        result.max_nu_norm = max(result.max_nu_norm,
                                 float(np.linalg.norm(nu)))
        try:
            sim.step(nu, config.dt)
        except RodSimError as exc:
            result.truncated = True
            result.extra["failure"] = str(exc)
            break
        strain_trace.append(abs(max_strain(sim.rod, sim.nodes)))
        result.max_strain = max(result.max_strain, strain_trace[-1])
        x_obs_prev = x_obs
        nu_prev = nu

    if not result.truncated:
        result.times.append(steps * config.dt)
        result.error_trace.append(true_error())
    result.final_error = result.error_trace[-1]
    result.extra["gamma_violations"] = gamma_violations
    result.extra["strain_trace"] = strain_trace
    return finish_episode(result)


def _episode_task(task) -> EpisodeResult:
    params, x_des, config, seed, model = task
    return run_episode(params, x_des, config, seed, model=model)


def run_battery(
    params: DloParams,
    pool: np.ndarray,
    config: EpisodeConfig,
    seed: int,
    model: RbfnModel | None = None,
    workers: int = 1,
) -> list[EpisodeResult]:
    """One episode per goal shape, with independent per-episode seeds.

    With workers > 1 episodes run in a process pool; each worker gets
    its own pickled simulator and model, and results come back in goal
    order either way, so the worker count never changes the numbers.
    """
    children = np.random.SeedSequence(seed).spawn(len(pool))
    tasks = [
        (params, x_des, config, int(child.generate_state(1)[0]), model)
        for x_des, child in zip(pool, children)
    ]
    if workers <= 1:
        return [_episode_task(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool_exec:
        return list(pool_exec.map(_episode_task, tasks))
