"""Run configuration: one JSON document describes a whole experiment.

The document mirrors the package's dataclass configs section by section,
so adding a field to, say, TrainConfig automatically extends the schema.
Unknown keys are rejected with the full dotted path; silent typos in a
battery config are much worse than a loud failure.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .adaptation import AdaptConfig
from .baselines import MppiConfig, WlsConfig
from .controller import ControllerConfig
from .datasets import CollectConfig
from .episodes import METHODS, EpisodeConfig
from .rodsim import DloParams
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed run configuration; the message names the key path."""


@dataclass
class SimSection:
    node_count: int = 41
    dt: float = 0.1

    def validate(self) -> None:
        if self.node_count < 3:
            raise ValueError("node_count must be at least 3")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class BaselineSection:
    mppi: MppiConfig = field(default_factory=MppiConfig)
    wls: WlsConfig = field(default_factory=WlsConfig)


@dataclass
class BatterySection:
    method: str = "ours"
    episodes: int = 10
    duration: float = 30.0
    noise_std: float = 0.0
    separation_frac: float = 0.8
    workers: int = 1

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.episodes < 1:
            raise ValueError("episodes must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass
class OutputSection:
    dir: str = "runs"


@dataclass
class RunConfig:
    seed: int = 0
    mode: str = "3d"
    dlo: DloParams = field(default_factory=lambda: DloParams(0.5, 10.0))
    dlo_list: list[DloParams] = field(default_factory=list)
    sim: SimSection = field(default_factory=SimSection)
    collection: CollectConfig = field(default_factory=CollectConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    adaptation: AdaptConfig = field(default_factory=AdaptConfig)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    battery: BatterySection = field(default_factory=BatterySection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> None:
        if self.mode not in ("2d", "3d"):
            raise ValueError("mode must be '2d' or '3d'")
        self.dlo.validate()
        for d in self.dlo_list:
            d.validate()
        self.sim.validate()
        self.collection.validate()
        self.training.validate()
        self.adaptation.validate()
        self.baseline.mppi.validate()
        self.baseline.wls.validate()
        self.battery.validate()
        self.controller.validate(self.collection.feature_count)

    def cables(self) -> list[DloParams]:
        """Cables for collection: the list when given, else the one DLO."""
        return list(self.dlo_list) if self.dlo_list else [self.dlo]

    def collection_config(self, seed: int | None = None,
                          duration: float | None = None) -> CollectConfig:
        """Collection settings with the shared knobs applied.

        The top-level mode, the sim timestep, and the run seed are
        authoritative; the collection section only holds what is
        specific to collection.
        """
        fields = {"mode": self.mode, "dt": self.sim.dt,
                  "seed": self.seed if seed is None else seed}
        if duration is not None:
            fields["duration"] = duration
        return dataclasses.replace(self.collection, **fields)

    def episode_config(self, method: str | None = None) -> EpisodeConfig:
        controller = dataclasses.replace(self.controller)
        if self.mode == "2d" and controller.dof_mask is None:
            from .controller import planar_dof_mask

            controller.dof_mask = planar_dof_mask()
        return EpisodeConfig(
            method=method or self.battery.method,
            duration=self.battery.duration,
            dt=self.sim.dt,
            feature_count=self.collection.feature_count,
            noise_std=self.battery.noise_std,
            separation_frac=self.battery.separation_frac,
            mode=self.mode,
            controller=controller,
            adapt=dataclasses.replace(self.adaptation),
            mppi=dataclasses.replace(self.baseline.mppi),
            wls=dataclasses.replace(self.baseline.wls),
        )


# ---------------------------------------------------------------------------
# Strict dict -> dataclass conversion


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _from_mapping(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in typing.get_args(tp):
            return None
        last_err = None
        for arm in typing.get_args(tp):
            if arm is type(None):
                continue
            try:
                return _convert(arm, value, path)
            except ConfigError as err:
                last_err = err
        raise last_err or ConfigError(f"{path}: cannot interpret {value!r}")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        (elt,) = typing.get_args(tp)
        return [_convert(elt, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            elt = args[0]
            return tuple(_convert(elt, v, f"{path}[{i}]")
                         for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries")
        return tuple(_convert(a, v, f"{path}[{i}]")
                     for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected an integer")
        if float(value) != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return value
    raise ConfigError(f"{path}: unsupported config type {tp!r}")


def _from_mapping(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
        kwargs[key] = _convert(hints[key], value, f"{path}.{key}")
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{path}: {err}") from err


def run_config_from_dict(data: dict) -> RunConfig:
    cfg = _from_mapping(RunConfig, data, "config")
    try:
        cfg.validate()
    except ValueError as err:
        raise ConfigError(f"config: {err}") from err
    return cfg


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(f"{path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from err
    return run_config_from_dict(doc)
