#!/usr/bin/env python3
"""
🧾 Experiment configuration

Typed pydantic models for one experiment, read from TOML files with dotted
keys (``env.id = "lqr"``, ``algo.name = "dpg"``, ``penalty.kappa = 0.999``)
and written back as flat dotted lines. Unknown keys are rejected.
"""

import json
import math
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.td_regularization.errors import ConfigurationError

logger = structlog.get_logger(__name__)

AlgorithmName = Literal["reinforce", "spg", "dpg", "td3", "trpo", "ppo"]
V_CRITIC_ALGORITHMS = ("trpo", "ppo")
SECTIONS = ("env", "features", "policy", "algo", "penalty", "eval", "run")
KEY_ALIASES = {"kappa": "penalty.kappa", "eta0": "penalty.eta0"}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvConfig(_Section):
    id: Literal["lqr", "pendulum", "double_pendulum"] = "lqr"
    gamma: float = Field(0.99, ge=0.0, lt=1.0)
    horizon: Optional[int] = Field(None, ge=1)
    noise_std: float = Field(0.1, ge=0.0)
    init_low: float = -10.0
    init_high: float = 10.0
    observation_noise: bool = False
    observation_noise_scale: float = Field(0.05, ge=0.0)
    observation_noise_symmetric: bool = False
    velocity_sign: Literal["plus", "minus"] = "plus"
    friction: float = Field(2.5, ge=0.0)


class FeatureConfig(_Section):
    kind: Literal["polynomial", "fourier"] = "polynomial"
    degree: int = Field(2, ge=1)
    count: int = Field(100, ge=1)
    calibration_states: int = Field(10_000, ge=2)
    calibration_seed: int = 12345


class PolicyConfig(_Section):
    covariance: Literal["scalar", "diagonal", "full"] = "diagonal"
    init_variance: float = Field(5.0, gt=0.0)
    use_bias: bool = False
    exploration_std: float = Field(5.0, ge=0.0)
    exploration_decay: float = Field(0.95, gt=0.0, le=1.0)


class AlgorithmConfig(_Section):
    name: AlgorithmName = "spg"
    regularizer: Literal["none", "td-reg", "gae-reg"] = "none"
    critic_mode: Literal["single", "target", "twin", "double"] = "single"
    retrace: bool = False
    policy_delay: int = Field(1, ge=1)
    target_actor_tau: Optional[float] = Field(None, gt=0.0, le=1.0)
    critic_tau: float = Field(1.0, gt=0.0, le=1.0)

    actor_lr: float = Field(0.01, gt=0.0)
    critic_lr: float = Field(0.01, gt=0.0)
    batch_size: int = Field(32, ge=1)
    warmup_steps: int = Field(100, ge=0)
    replay_capacity: Optional[int] = Field(None, ge=1)
    episodes_per_iteration: int = Field(1, ge=1)
    episode_steps: int = Field(150, ge=1)
    clip_norm: Optional[float] = Field(1.0, gt=0.0)

    next_action_mode: Literal["mean", "sampled"] = "mean"
    next_action_count: int = Field(10, ge=1)
    critic_solver: Literal["iterated", "lstd"] = "iterated"
    critic_sweeps: int = Field(100, ge=1)
    critic_tol: float = Field(1e-8, gt=0.0)
    ridge: float = Field(1e-6, ge=0.0)

    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    kl_bound: float = Field(0.01, gt=0.0)
    cg_iterations: int = Field(10, ge=1)
    cg_damping: float = Field(0.1, ge=0.0)
    max_backtracks: int = Field(10, ge=0)
    clip_epsilon: float = Field(0.05, gt=0.0, lt=1.0)
    epochs: int = Field(20, ge=1)
    minibatch_size: int = Field(64, ge=1)
    reuse_iterations: int = Field(4, ge=0)

    target_noise_std: float = Field(2.0, ge=0.0)
    target_noise_clip_ratio: float = Field(0.5, ge=0.0)


class PenaltyConfig(_Section):
    eta0: float = Field(0.1, ge=0.0)
    kappa: float = Field(0.999, ge=0.0)


class EvalConfig(_Section):
    every: int = Field(1, ge=1)
    episodes: int = Field(10, ge=1)
    max_steps: int = Field(150, ge=1)


class RunConfig(_Section):
    name: str = "experiment"
    trials: int = Field(1, ge=1)
    seed_base: int = Field(0, ge=0)
    budget: int = Field(100, ge=1)
    workers: int = Field(1, ge=1)
    out: str = "results"


class ExperimentConfig(_Section):
    env: EnvConfig = EnvConfig()
    features: FeatureConfig = FeatureConfig()
    policy: PolicyConfig = PolicyConfig()
    algo: AlgorithmConfig = AlgorithmConfig()
    penalty: PenaltyConfig = PenaltyConfig()
    eval: EvalConfig = EvalConfig()
    run: RunConfig = RunConfig()

    @model_validator(mode="after")
    def check_combinations(self) -> "ExperimentConfig":
        algo = self.algo
        uses_v_critic = algo.name in V_CRITIC_ALGORITHMS
        if algo.regularizer == "gae-reg" and not uses_v_critic:
            raise ValueError("gae-reg needs a V-critic algorithm (trpo, ppo)")
        if algo.retrace and not uses_v_critic:
            raise ValueError("retrace needs a V-critic algorithm (trpo, ppo)")
        if algo.critic_mode == "double" and not uses_v_critic:
            raise ValueError("double critics need a V-critic algorithm (trpo, ppo)")
        if (algo.critic_mode == "twin") != (algo.name == "td3"):
            raise ValueError("td3 runs exactly with critic_mode = 'twin'")
        if algo.critic_mode == "target" and algo.name not in ("dpg", "td3"):
            raise ValueError("target critics are used by the online learners (dpg, td3)")
        if algo.name == "reinforce" and algo.regularizer != "none":
            raise ValueError("reinforce has no critic and cannot be regularized")
        if self.env.init_low >= self.env.init_high:
            raise ValueError("env.init_low must be below env.init_high")
        if self.env.id == "lqr" and self.features.kind != "polynomial":
            raise ValueError("the lqr uses polynomial features")
        if self.env.id != "lqr" and (self.features.kind != "fourier" or not uses_v_critic):
            raise ValueError("pendulum environments run trpo or ppo over fourier features")
        if self.env.observation_noise and self.env.id != "lqr":
            raise ValueError("the observation-noise wrapper is defined for the lqr")
        return self

    @property
    def regularized(self) -> bool:
        return self.algo.regularizer != "none"


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    raise ConfigurationError(f"cannot serialize config value {value!r}")


def config_to_dotted(config: ExperimentConfig) -> Dict[str, Any]:
    """Flat {"section.key": value} mapping; unset optional keys are left out"""
    flat: Dict[str, Any] = {}
    for section in SECTIONS:
        for key, value in getattr(config, section).model_dump().items():
            if value is not None:
                flat[f"{section}.{key}"] = value
    return flat


def dump_config(config: ExperimentConfig) -> str:
    return "\n".join(f"{key} = {_format_value(value)}" for key, value in config_to_dotted(config).items()) + "\n"


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid experiment config: {e}") from e


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"config is not valid TOML: {e}") from e
    return parse_config(data)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    config = loads_config(path.read_text(encoding="utf-8"))
    logger.info("config_loaded", path=str(path), algorithm=config.algo.name, env=config.env.id)
    return config


def resolve_key(key: str) -> str:
    key = KEY_ALIASES.get(key, key)
    section, _, field = key.partition(".")
    if section not in SECTIONS or not field:
        raise ConfigurationError(f"unknown config key '{key}'")
    return key


def with_override(config: ExperimentConfig, key: str, value: Any) -> ExperimentConfig:
    """Copy of ``config`` with one dotted key replaced; the result is re-validated"""
    section, _, field = resolve_key(key).partition(".")
    data = config.model_dump()
    if field not in data[section]:
        raise ConfigurationError(f"unknown config key '{section}.{field}'")
    data[section][field] = value
    return parse_config(data)


def parse_grid(spec: str) -> tuple:
    """'penalty.kappa=0.1,0.5,1' -> ('penalty.kappa', [0.1, 0.5, 1])"""
    key, sep, raw_values = spec.partition("=")
    if not sep or not raw_values.strip():
        raise ConfigurationError(f"grid must look like key=v1,v2,..., got '{spec}'")
    values: List[Any] = []
    for raw in raw_values.split(","):
        try:
            values.append(tomllib.loads(f"v = {raw.strip()}")["v"])
        except tomllib.TOMLDecodeError:
            values.append(raw.strip())
    return resolve_key(key.strip()), values
