#!/usr/bin/env python3
"""
🧪 Experiment harness

Builds environments and learners from an ExperimentConfig, runs seeded
trials (in a process pool when ``run.workers > 1``), evaluates the policy at
a fixed cadence with exploration off and records one row per evaluation.

A trial that raises a numerical error, or whose policy leaves the stable
set, is marked diverged and keeps emitting clamped rows until the budget is
spent so that every trial has the same number of rows.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy.linalg import LinAlgError

from src.td_regularization.config import ExperimentConfig
from src.td_regularization.critics import LinearCritic, TwinCritic
from src.td_regularization.deterministic_pg import DeterministicPolicyGradient, DpgSettings
from src.td_regularization.env_core import (
    EnvironmentContract,
    ObservationNoiseWrapper,
    TransitionBatch,
    collect_trajectory,
)
from src.td_regularization.env_lqr import LqrEnv, LqrSpec, lqr_is_stable, lqr_true_q, lqr_true_return
from src.td_regularization.env_pendulum import (
    DoublePendulumEnv,
    DoublePendulumSpec,
    SinglePendulumEnv,
    SinglePendulumSpec,
)
from src.td_regularization.errors import DataError, DynamicsError, NumericalError
from src.td_regularization.estimators import discounted_returns
from src.td_regularization.features import FourierBasis, IdentityBasis, PolynomialBasis, make_fourier_basis
from src.td_regularization.learner import STREAM_NAMES, Learner, TrialStreams
from src.td_regularization.oracle_cache import OracleCache
from src.td_regularization.penalty import PenaltySchedule
from src.td_regularization.policies import (
    DeterministicPolicy,
    GaussianPolicy,
    UniformRandomPolicy,
    init_lqr_gain,
    load_checkpoint,
    save_checkpoint,
)
from src.td_regularization.stochastic_pg import SpgSettings, StochasticPolicyGradient
from src.td_regularization.trust_region import TrustRegionLearner, TrustRegionSettings

logger = structlog.get_logger(__name__)

RETURN_FLOOR = -1e3
MSTDE_CAP = 3e5
RECORD_COLUMNS = ["trial", "step", "return", "mstde_est", "mstde_true", "eta", "diverged"]

# Errors that end a trial's training without stopping the experiment
TRIAL_ERRORS = (NumericalError, DynamicsError, DataError, FloatingPointError, LinAlgError)

calibration_cache = OracleCache(max_size=8)


# ============================================================================
# ENVIRONMENTS AND LEARNERS
# ============================================================================

def build_env(config: ExperimentConfig) -> EnvironmentContract:
    env_config = config.env
    if env_config.id == "lqr":
        env = LqrEnv(LqrSpec(
            noise_std=env_config.noise_std,
            gamma=env_config.gamma,
            horizon=env_config.horizon or 150,
            init_low=env_config.init_low,
            init_high=env_config.init_high,
        ))
        if env_config.observation_noise:
            return ObservationNoiseWrapper(
                env, scale=env_config.observation_noise_scale, symmetric=env_config.observation_noise_symmetric
            )
        return env
    if env_config.id == "pendulum":
        return SinglePendulumEnv(SinglePendulumSpec(
            gamma=env_config.gamma,
            train_horizon=env_config.horizon or 50,
            eval_horizon=config.eval.max_steps,
        ))
    return DoublePendulumEnv(DoublePendulumSpec(
        gamma=env_config.gamma,
        friction=env_config.friction,
        velocity_sign=env_config.velocity_sign,
        train_horizon=env_config.horizon or 500,
        eval_horizon=config.eval.max_steps,
    ))


def _collect_calibration_states(config: ExperimentConfig) -> np.ndarray:
    env = build_env(config)
    rng = np.random.default_rng(config.features.calibration_seed)
    max_torque = env.spec.max_torque
    policy = UniformRandomPolicy(env.action_dim, -max_torque, max_torque)
    target = config.features.calibration_states
    states: List[np.ndarray] = []
    collected = 0
    while collected < target:
        trajectory = collect_trajectory(env, policy, rng, env.spec.train_horizon)
        batch = trajectory.as_batch()
        states.append(batch.states)
        collected += len(batch)
    return np.vstack(states)[:target]


def calibration_states(config: ExperimentConfig, out_dir: Optional[Path] = None) -> np.ndarray:
    """Random-policy states used to set the Fourier bandwidth, shared by every trial.

    Saved as ``calibration_<env>.npy`` under ``out_dir`` and reused from there.
    """
    path = None if out_dir is None else Path(out_dir) / f"calibration_{config.env.id}.npy"
    if path is not None and path.is_file():
        states = np.load(path)
        if len(states) >= config.features.calibration_states:
            return states[: config.features.calibration_states]

    parts = (
        config.env.id,
        config.env.velocity_sign,
        config.env.friction,
        config.env.horizon,
        config.features.calibration_states,
        config.features.calibration_seed,
    )
    states = calibration_cache.get_or_compute(parts, lambda: _collect_calibration_states(config))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, states)
        logger.info("calibration_states_saved", path=str(path), count=len(states))
    return states


def build_learner(
    config: ExperimentConfig,
    env: EnvironmentContract,
    streams: TrialStreams,
    calibration: Optional[np.ndarray] = None,
) -> Learner:
    """Learner for one trial.

    Initial parameters come from ``streams.init`` in a fixed order (basis,
    policy gain, first critic, second critic) so that every algorithm run
    under the same seed starts from the same draws.
    """
    algo = config.algo
    state_dim, action_dim = env.state_dim, env.action_dim

    if config.features.kind == "fourier":
        policy_basis = make_fourier_basis(config.features.count, calibration, streams.init)
        v_basis = policy_basis
        q_basis = None
        gain = np.zeros((action_dim, policy_basis.output_dim))
    else:
        policy_basis = IdentityBasis(state_dim)
        v_basis = PolynomialBasis(state_dim, config.features.degree)
        q_basis = PolynomialBasis(state_dim + action_dim, config.features.degree)
        gain = init_lqr_gain(state_dim, streams.init)

    uses_v_critic = algo.name in ("trpo", "ppo")
    critic_basis = v_basis if uses_v_critic else q_basis
    kind = "v" if uses_v_critic else "q"
    with_target = algo.critic_mode in ("target", "twin")
    first = LinearCritic.create(critic_basis, kind, state_dim, streams.init, with_target=with_target)
    second = LinearCritic.create(critic_basis, kind, state_dim, streams.init, with_target=with_target)

    schedule = PenaltySchedule(eta0=config.penalty.eta0, kappa=config.penalty.kappa)
    regularized = config.regularized

    if algo.name in ("dpg", "td3"):
        policy = DeterministicPolicy.from_gain(
            policy_basis,
            gain,
            exploration_std=config.policy.exploration_std,
            exploration_decay=config.policy.exploration_decay,
        )
        critic = TwinCritic(first, second) if algo.name == "td3" else first
        settings = DpgSettings(
            algorithm=algo.name,
            batch_size=algo.batch_size,
            warmup_steps=algo.warmup_steps,
            replay_capacity=algo.replay_capacity,
            actor_lr=algo.actor_lr,
            critic_lr=algo.critic_lr,
            critic_tau=algo.critic_tau,
            target_actor_tau=algo.target_actor_tau,
            policy_delay=algo.policy_delay,
            target_noise_std=algo.target_noise_std,
            target_noise_clip=algo.target_noise_clip_ratio,
        )
        return DeterministicPolicyGradient(env, policy, critic, schedule, streams, settings, regularized)

    policy = GaussianPolicy.create(
        policy_basis,
        action_dim,
        config.policy.covariance,
        config.policy.init_variance,
        use_bias=config.policy.use_bias,
        gain=gain,
    )
    if uses_v_critic:
        critics = [first, second] if algo.critic_mode == "double" else [first]
        settings = TrustRegionSettings(
            algorithm=algo.name,
            regularizer=algo.regularizer,
            retrace=algo.retrace,
            double_critic=algo.critic_mode == "double",
            episodes_per_iteration=algo.episodes_per_iteration,
            episode_steps=algo.episode_steps,
            gae_lambda=algo.gae_lambda,
            reuse_iterations=algo.reuse_iterations,
            ridge=algo.ridge,
            kl_bound=algo.kl_bound,
            cg_iterations=algo.cg_iterations,
            cg_damping=algo.cg_damping,
            max_backtracks=algo.max_backtracks,
            clip_epsilon=algo.clip_epsilon,
            epochs=algo.epochs,
            minibatch_size=algo.minibatch_size,
            actor_lr=algo.actor_lr,
        )
        return TrustRegionLearner(env, policy, critics, schedule, streams, settings, regularized)

    settings = SpgSettings(
        mode=algo.name,
        episodes_per_iteration=algo.episodes_per_iteration,
        episode_steps=algo.episode_steps,
        learning_rate=algo.actor_lr,
        clip_norm=algo.clip_norm,
        next_action_mode=algo.next_action_mode,
        next_action_count=algo.next_action_count,
        critic_solver=algo.critic_solver,
        critic_sweeps=algo.critic_sweeps,
        critic_tol=algo.critic_tol,
        ridge=algo.ridge,
    )
    critic = None if algo.name == "reinforce" else first
    return StochasticPolicyGradient(env, policy, critic, schedule, streams, settings, regularized)


# ============================================================================
# EVALUATION
# ============================================================================

@dataclass
class Evaluation:
    expected_return: float
    mstde_estimated: float
    mstde_true: float


def evaluation_rng(seed: int) -> np.random.Generator:
    """Stream next to the trial streams; every evaluation of a trial replays it"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(len(STREAM_NAMES),)))


def evaluate_policy(
    env: EnvironmentContract,
    learner: Learner,
    episodes: int,
    max_steps: int,
    rng: np.random.Generator,
) -> Evaluation:
    """Exploration-free Monte Carlo return and squared TD errors on the evaluation transitions.

    For the LQR the return is the closed-form expected return of the current
    gain, so the rollouts only supply transitions, and the true MSTDE compares
    the critic with the closed-form Q.
    """
    trajectories = [
        collect_trajectory(env, learner.policy, rng, max_steps, explore=False) for _ in range(episodes)
    ]
    batch = TransitionBatch.from_transitions([t for trajectory in trajectories for t in trajectory])
    mstde_estimated = float(np.mean(learner.td_errors(batch) ** 2))
    mstde_true = math.nan

    spec = getattr(env, "spec", None)
    if not isinstance(spec, LqrSpec):
        returns = [discounted_returns(t.rewards, env.gamma)[0] for t in trajectories]
        expected_return = float(np.mean(returns))
    else:
        gain = learner.policy.gain
        expected_return = lqr_true_return(spec, gain)
        q_estimates = learner.q_values(batch.states, batch.actions)
        if q_estimates is not None:
            if lqr_is_stable(spec, gain):
                q_true = lqr_true_q(spec, gain).value(batch.states, batch.actions)
                mstde_true = float(np.mean((q_true - q_estimates) ** 2))
            else:
                mstde_true = math.inf
    return Evaluation(expected_return, mstde_estimated, mstde_true)


def detect_divergence(env: EnvironmentContract, learner: Learner, evaluation: Optional[Evaluation] = None) -> bool:
    """LQR: unstable closed loop or non-finite parameters. Pendulums: non-finite parameters or return."""
    if not learner.parameters_finite():
        return True
    spec = getattr(env, "spec", None)
    if isinstance(spec, LqrSpec):
        return not lqr_is_stable(spec, learner.policy.gain)
    return evaluation is not None and not np.isfinite(evaluation.expected_return)


def clamp_return(value: float) -> float:
    if math.isnan(value):
        return RETURN_FLOOR
    return max(value, RETURN_FLOOR)


def clamp_mstde(value: float) -> float:
    """NaN (metric not available) passes through; non-finite or huge values cap at 3e5"""
    if math.isnan(value):
        return value
    if not np.isfinite(value):
        return MSTDE_CAP
    return min(value, MSTDE_CAP)


# ============================================================================
# CHECKPOINTS
# ============================================================================

def checkpoint_dir(out_dir: Path, name: str) -> Path:
    return Path(out_dir) / name / "checkpoints"


def save_trial_checkpoint(learner: Learner, directory: Path, trial: int) -> Path:
    """Final policy of a trial as ``policy_trial_<k>.npz``; a Fourier basis goes next to it"""
    directory.mkdir(parents=True, exist_ok=True)
    basis = learner.policy.basis
    if isinstance(basis, FourierBasis):
        basis_name = f"basis_trial_{trial}.npz"
        basis.save(directory / basis_name)
    else:
        basis_name = "identity"
    kind = "deterministic" if isinstance(learner.policy, DeterministicPolicy) else "gaussian"
    path = directory / f"policy_trial_{trial}.npz"
    save_checkpoint(path, learner.policy.theta, kind, basis_name)
    logger.debug("checkpoint_saved", path=str(path), kind=kind, basis=basis_name)
    return path


def load_trial_policy(
    config: ExperimentConfig, directory: Path, trial: int
) -> Union[GaussianPolicy, DeterministicPolicy]:
    """Policy saved by ``save_trial_checkpoint`` for ``trial``, with exploration at its configured start"""
    params, kind, basis_name = load_checkpoint(Path(directory) / f"policy_trial_{trial}.npz")
    env = build_env(config)
    if basis_name == "identity":
        basis = IdentityBasis(env.state_dim)
    else:
        basis = FourierBasis.load(Path(directory) / basis_name)
    if kind == "deterministic":
        return DeterministicPolicy(
            basis,
            env.action_dim,
            params,
            exploration_std=config.policy.exploration_std,
            exploration_decay=config.policy.exploration_decay,
        )
    return GaussianPolicy(basis, env.action_dim, config.policy.covariance, params, use_bias=config.policy.use_bias)


# ============================================================================
# TRIALS
# ============================================================================

@dataclass
class TrialResult:
    trial: int
    rows: List[Dict[str, Any]]
    stats: Dict[str, Any]
    diverged: bool
    duration: float


@dataclass
class RunRecord:
    """Evaluation rows of every trial plus per-trial learner statistics"""
    name: str
    config: ExperimentConfig
    frame: pd.DataFrame
    trial_stats: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def divergence_count(self) -> int:
        return int(self.frame.groupby("trial")["diverged"].any().sum())

    def final_rows(self) -> pd.DataFrame:
        return self.frame.sort_values("step").groupby("trial").tail(1).sort_values("trial")


def _row(trial: int, step: int, evaluation: Evaluation, eta: float, diverged: bool, has_critic: bool) -> Dict[str, Any]:
    if diverged:
        return {
            "trial": trial,
            "step": step,
            "return": RETURN_FLOOR,
            "mstde_est": MSTDE_CAP if has_critic else math.nan,
            "mstde_true": MSTDE_CAP if not math.isnan(evaluation.mstde_true) else math.nan,
            "eta": eta,
            "diverged": True,
        }
    return {
        "trial": trial,
        "step": step,
        "return": clamp_return(evaluation.expected_return),
        "mstde_est": clamp_mstde(evaluation.mstde_estimated),
        "mstde_true": clamp_mstde(evaluation.mstde_true),
        "eta": eta,
        "diverged": False,
    }


def run_trial(
    config: ExperimentConfig,
    trial: int,
    calibration: Optional[np.ndarray] = None,
    save_dir: Optional[Path] = None,
) -> TrialResult:
    """One seeded trial; with ``save_dir`` the final policy is checkpointed there"""
    started = time.time()
    seed = config.run.seed_base + trial
    env = build_env(config)
    learner = build_learner(config, env, TrialStreams.from_seed(seed), calibration)
    has_critic = config.algo.name != "reinforce"
    log = logger.bind(trial=trial, seed=seed, algorithm=config.algo.name)

    rows: List[Dict[str, Any]] = []
    diverged = False
    last = Evaluation(math.nan, math.nan, math.nan)
    checkpoints = list(range(0, config.run.budget + 1, config.eval.every))

    for checkpoint in checkpoints:
        if not diverged:
            try:
                with np.errstate(over="raise", invalid="raise"):
                    while learner.progress < checkpoint:
                        learner.iterate()
            except TRIAL_ERRORS as e:
                log.warning("trial_diverged", step=learner.progress, error=str(e))
                diverged = True

        if not diverged:
            try:
                last = evaluate_policy(
                    env, learner, config.eval.episodes, config.eval.max_steps, evaluation_rng(seed)
                )
                diverged = detect_divergence(env, learner, last)
            except TRIAL_ERRORS as e:
                log.warning("evaluation_failed", step=checkpoint, error=str(e))
                diverged = True
            if diverged:
                log.warning("trial_diverged", step=checkpoint)

        rows.append(_row(trial, checkpoint, last, learner.eta, diverged, has_critic))
        log.info(
            "evaluation",
            step=checkpoint,
            expected_return=rows[-1]["return"],
            mstde=rows[-1]["mstde_est"],
            eta=rows[-1]["eta"],
            diverged=diverged,
        )

    if save_dir is not None:
        save_trial_checkpoint(learner, save_dir, trial)
    return TrialResult(trial, rows, learner.get_stats(), diverged, time.time() - started)


def _run_trial_args(args: Tuple[ExperimentConfig, int, Optional[np.ndarray], Optional[Path]]) -> TrialResult:
    return run_trial(*args)


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> RunRecord:
    """All trials of ``config`` (seeds seed_base + trial); rows ordered by trial then step.

    With ``out_dir`` the final policy of every trial is saved under
    ``<out_dir>/<name>/checkpoints``.
    """
    calibration = None
    if config.features.kind == "fourier":
        calibration = calibration_states(config, out_dir)

    save_dir = None if out_dir is None else checkpoint_dir(out_dir, config.run.name)
    jobs = [(config, trial, calibration, save_dir) for trial in range(config.run.trials)]
    logger.info(
        "experiment_started",
        name=config.run.name,
        trials=config.run.trials,
        workers=config.run.workers,
        algorithm=config.algo.name,
    )
    if config.run.workers > 1:
        with ProcessPoolExecutor(max_workers=config.run.workers) as pool:
            results = list(pool.map(_run_trial_args, jobs))
    else:
        results = [_run_trial_args(job) for job in jobs]

    rows = [row for result in sorted(results, key=lambda r: r.trial) for row in result.rows]
    frame = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    frame = frame.astype({"trial": int, "step": int, "diverged": bool})
    record = RunRecord(
        name=config.run.name,
        config=config,
        frame=frame,
        trial_stats=[{"trial": r.trial, "duration": r.duration, **r.stats} for r in results],
    )
    logger.info("experiment_finished", name=config.run.name, diverged=record.divergence_count)
    return record
