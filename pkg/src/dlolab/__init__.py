"""Learning and adaptive control of global deformation Jacobians for elastic rods."""

from .adaptation import AdaptConfig, OnlineAdapter
from .config import ConfigError, RunConfig, load_run_config, run_config_from_dict
from .controller import ControllerConfig, control_step, solve_control_qcqp
from .datasets import (
    CollectConfig,
    Dataset,
    collect_domain_randomized,
    collect_random,
    load_dataset,
    save_dataset,
)
from .episodes import EpisodeConfig, desired_shape_pool, run_battery, run_episode
from .evaluation import evaluate_model, shape_rollout_errors, velocity_errors
from .metrics import EpisodeResult, summarize, summary_csv
from .rbfn import RbfnModel, load_model, predict_jacobian, save_model
from .rodsim import DloParams, Simulation, solve_equilibrium
from .training import TrainConfig, train_offline

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "CollectConfig",
    "ConfigError",
    "ControllerConfig",
    "Dataset",
    "DloParams",
    "EpisodeConfig",
    "EpisodeResult",
    "OnlineAdapter",
    "RbfnModel",
    "RunConfig",
    "Simulation",
    "TrainConfig",
    "collect_domain_randomized",
    "collect_random",
    "control_step",
    "desired_shape_pool",
    "evaluate_model",
    "load_dataset",
    "load_model",
    "load_run_config",
    "predict_jacobian",
    "run_battery",
    "run_config_from_dict",
    "run_episode",
    "save_dataset",
    "save_model",
    "shape_rollout_errors",
    "solve_control_qcqp",
    "solve_equilibrium",
    "summarize",
    "summary_csv",
    "train_offline",
    "velocity_errors",
    "__version__",
]
