#!/usr/bin/env python3
"""
🛡️ TRPO and PPO with TD- or GAE-regularized advantages

Both learners optimize mean(rho * A_eta) where rho = pi_theta / beta is the
ratio to the stored behavior log-probabilities and

    A_eta = standardize(A) - eta * penalty
    penalty = standardize(standardize(delta_V)^2)   td-reg
            = standardize(standardize(A)^2)         gae-reg
            = 0                                     none

TRPO takes a natural-gradient step (conjugate gradient on the Fisher) under
a KL line search. PPO runs ADAM epochs on the clipped objective, where the
penalty is clipped pessimistically (max) and the advantage term optimistically
only when that is the smaller value (min).
"""

from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog

from src.td_regularization.critic_fitting import fit_critic
from src.td_regularization.critics import LinearCritic
from src.td_regularization.env_core import EnvironmentContract, Trajectory, TransitionBatch, collect_trajectory
from src.td_regularization.errors import ConfigurationError, NumericalError
from src.td_regularization.estimators import EstimatorConfig, retrace_advantage, standardize, td_errors_v
from src.td_regularization.learner import Learner, TrialStreams
from src.td_regularization.optim import (
    AdamState,
    FisherOperator,
    adam_step,
    backtracking_line_search,
    conjugate_gradient_solve,
)
from src.td_regularization.penalty import PenaltySchedule
from src.td_regularization.policies import GaussianPolicy

logger = structlog.get_logger(__name__)

Regularizer = Literal["none", "td-reg", "gae-reg"]
REGULARIZERS = ("none", "td-reg", "gae-reg")


def regularization_terms(
    advantages: np.ndarray, td_errors: np.ndarray, regularizer: Regularizer
) -> Tuple[np.ndarray, np.ndarray]:
    """(standardized advantage, standardized penalty); each array is standardized on its own"""
    if regularizer not in REGULARIZERS:
        raise ConfigurationError(f"unknown regularizer '{regularizer}'")
    advantage_s = standardize(advantages)
    if regularizer == "td-reg":
        penalty = standardize(standardize(td_errors) ** 2)
    elif regularizer == "gae-reg":
        penalty = standardize(advantage_s ** 2)
    else:
        penalty = np.zeros_like(advantage_s)
    return advantage_s, penalty


def regularized_advantage(
    advantages: np.ndarray, td_errors: np.ndarray, eta: float, regularizer: Regularizer
) -> np.ndarray:
    advantage_s, penalty = regularization_terms(advantages, td_errors, regularizer)
    if eta == 0.0:
        return advantage_s
    return advantage_s - eta * penalty


@dataclass
class SurrogateBatch:
    """Samples with standardized advantage and penalty, fixed for one policy update"""
    states: np.ndarray
    actions: np.ndarray
    behavior_log_probs: np.ndarray
    advantages: np.ndarray
    penalties: np.ndarray

    @classmethod
    def build(
        cls,
        states: np.ndarray,
        actions: np.ndarray,
        behavior_log_probs: np.ndarray,
        advantages: np.ndarray,
        td_errors: np.ndarray,
        regularizer: Regularizer,
    ) -> "SurrogateBatch":
        advantage_s, penalty = regularization_terms(advantages, td_errors, regularizer)
        return cls(states, actions, np.asarray(behavior_log_probs, dtype=float), advantage_s, penalty)

    def __len__(self) -> int:
        return len(self.advantages)

    def subset(self, indices: np.ndarray) -> "SurrogateBatch":
        return SurrogateBatch(
            self.states[indices],
            self.actions[indices],
            self.behavior_log_probs[indices],
            self.advantages[indices],
            self.penalties[indices],
        )

    def combined(self, eta: float) -> np.ndarray:
        if eta == 0.0:
            return self.advantages
        return self.advantages - eta * self.penalties


def importance_ratios(policy: GaussianPolicy, batch: SurrogateBatch) -> np.ndarray:
    return np.exp(policy.log_probs(batch.states, batch.actions) - batch.behavior_log_probs)


def trpo_gradient(policy: GaussianPolicy, batch: SurrogateBatch, weights: np.ndarray) -> np.ndarray:
    """mean(rho * grad log pi * weights)"""
    rho = importance_ratios(policy, batch)
    return np.mean(policy.scores(batch.states, batch.actions) * (rho * weights)[:, None], axis=0)


def trpo_surrogate(theta: np.ndarray, policy: GaussianPolicy, batch: SurrogateBatch, eta: float) -> float:
    candidate = policy.with_params(theta)
    return float(np.mean(importance_ratios(candidate, batch) * batch.combined(eta)))


@dataclass
class TrpoStepResult:
    policy: GaussianPolicy
    accepted: bool
    kl: float
    improvement: float
    step_fraction: float


def trpo_update(
    policy: GaussianPolicy,
    batch: SurrogateBatch,
    eta: float,
    kl_bound: float = 0.01,
    cg_iterations: int = 10,
    cg_damping: float = 0.1,
    max_backtracks: int = 10,
) -> TrpoStepResult:
    """One natural-gradient step on mean(rho A_eta) subject to mean KL(new || old) <= kl_bound.

    A non-positive or non-finite g'F^-1 g (no improvement direction) leaves
    the policy unchanged.
    """
    gradient = trpo_gradient(policy, batch, batch.combined(eta))
    operator = FisherOperator(
        lambda v: policy.fisher_vector_product(batch.states, v), policy.n_params, damping=cg_damping
    )
    direction = conjugate_gradient_solve(operator, gradient, max_iters=cg_iterations)
    curvature = float(gradient @ direction)
    if not np.isfinite(curvature) or curvature <= 0.0:
        logger.warning("trpo_no_update", curvature=curvature)
        return TrpoStepResult(policy, False, 0.0, 0.0, 0.0)

    full_step = np.sqrt(2.0 * kl_bound / curvature) * direction

    def evaluate(theta: np.ndarray) -> Tuple[float, float]:
        candidate = policy.with_params(theta)
        surrogate = float(np.mean(importance_ratios(candidate, batch) * batch.combined(eta)))
        return surrogate, candidate.mean_kl(policy, batch.states)

    result = backtracking_line_search(evaluate, policy.theta, full_step, kl_bound, max_backtracks=max_backtracks)
    if not result.accepted:
        return TrpoStepResult(policy, False, 0.0, 0.0, 0.0)
    return TrpoStepResult(policy.with_params(result.params), True, result.kl, result.improvement, result.step_fraction)


def _clip_cases(policy: GaussianPolicy, batch: SurrogateBatch, clip_epsilon: float):
    rho = importance_ratios(policy, batch)
    clipped = np.clip(rho, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return rho, clipped


def ppo_surrogate(
    theta: np.ndarray, policy: GaussianPolicy, batch: SurrogateBatch, eta: float, clip_epsilon: float = 0.05
) -> float:
    """mean min(rho A, clip(rho) A) - eta * mean max(rho P, clip(rho) P)"""
    rho, clipped = _clip_cases(policy.with_params(theta), batch, clip_epsilon)
    objective = float(np.mean(np.minimum(rho * batch.advantages, clipped * batch.advantages)))
    if eta == 0.0:
        return objective
    penalty = float(np.mean(np.maximum(rho * batch.penalties, clipped * batch.penalties)))
    return objective - eta * penalty


def ppo_gradient(
    policy: GaussianPolicy, batch: SurrogateBatch, eta: float, clip_epsilon: float = 0.05
) -> np.ndarray:
    """Gradient of ppo_surrogate; ties between the clipped and unclipped values take the unclipped branch"""
    rho, clipped = _clip_cases(policy, batch, clip_epsilon)
    scores = policy.scores(batch.states, batch.actions)

    objective_active = rho * batch.advantages <= clipped * batch.advantages
    gradient = np.mean(scores * (rho * batch.advantages * objective_active)[:, None], axis=0)
    if eta == 0.0:
        return gradient

    penalty_active = rho * batch.penalties >= clipped * batch.penalties
    penalty_gradient = np.mean(scores * (rho * batch.penalties * penalty_active)[:, None], axis=0)
    return gradient - eta * penalty_gradient


@dataclass(frozen=True)
class TrustRegionSettings:
    algorithm: Literal["trpo", "ppo"] = "trpo"
    regularizer: Regularizer = "none"
    retrace: bool = False
    double_critic: bool = False
    episodes_per_iteration: int = 10
    episode_steps: int = 50
    gae_lambda: float = 0.95
    reuse_iterations: int = 4
    ridge: float = 1e-6
    kl_bound: float = 0.01
    cg_iterations: int = 10
    cg_damping: float = 0.1
    max_backtracks: int = 10
    clip_epsilon: float = 0.05
    epochs: int = 20
    minibatch_size: int = 64
    actor_lr: float = 1e-4


class TrustRegionLearner(Learner):
    """Batch learner for TRPO and PPO over a V-critic (or a pair of V-critics).

    Each iteration collects fresh episodes, keeps them with the episodes of
    the previous ``reuse_iterations`` iterations, refits the critic on the
    lambda-returns and takes one policy update on all of that data.
    """

    def __init__(
        self,
        env: EnvironmentContract,
        policy: GaussianPolicy,
        critics: Sequence[LinearCritic],
        schedule: PenaltySchedule,
        streams: TrialStreams,
        settings: TrustRegionSettings,
        regularized: bool,
    ):
        super().__init__(env, schedule, streams, regularized and settings.regularizer != "none")
        expected = 2 if settings.double_critic else 1
        if len(critics) != expected or any(c.kind != "v" for c in critics):
            raise ConfigurationError(f"{settings.algorithm} needs {expected} V-critic(s)")
        self.policy = policy
        self.critics: List[LinearCritic] = list(critics)
        self.settings = settings
        self.estimator = EstimatorConfig(gamma=env.gamma, lam=settings.gae_lambda, use_retrace=settings.retrace)
        self.history: Deque[List[Trajectory]] = deque(maxlen=settings.reuse_iterations + 1)
        self.actor_adam = AdamState.create(policy.n_params, settings.actor_lr)
        self.active_critic = 0
        self.stats.update({"accepted_kls": [], "rejected_updates": 0})

    def _collect(self) -> List[Trajectory]:
        return [
            collect_trajectory(
                self.env,
                self.policy,
                self.streams.env,
                self.settings.episode_steps,
                policy_rng=self.streams.policy,
            )
            for _ in range(self.settings.episodes_per_iteration)
        ]

    def _advantages(self, critic: LinearCritic, trajectories: Sequence[Trajectory]):
        """(advantages, td errors) concatenated over trajectories"""
        advantages, td_errors = [], []
        for trajectory in trajectories:
            batch = trajectory.as_batch()
            estimate = retrace_advantage(
                critic,
                trajectory,
                self.estimator,
                behavior_log_probs=batch.log_probs,
                target_log_probs=self.policy.log_probs(batch.states, batch.actions),
                truncate=self.settings.retrace,
            )
            advantages.append(estimate.advantages)
            td_errors.append(estimate.td_errors)
        return np.concatenate(advantages), np.concatenate(td_errors)

    def _select_critics(self) -> Tuple[LinearCritic, LinearCritic]:
        """(critic refitted and used for the update, critic that bootstraps its targets)"""
        if not self.settings.double_critic:
            return self.critics[0], self.critics[0]
        self.active_critic = int(self.streams.misc.integers(2))
        return self.critics[self.active_critic], self.critics[1 - self.active_critic]

    def iterate(self) -> None:
        self.history.append(self._collect())
        trajectories = [t for group in self.history for t in group]
        batch = TransitionBatch.from_transitions([tr for t in trajectories for tr in t])

        critic, bootstrap_critic = self._select_critics()
        critic.weights = fit_critic(
            critic,
            trajectories,
            self.estimator,
            ridge=self.settings.ridge,
            target_critic=bootstrap_critic,
            target_policy=self.policy,
        )
        self.stats["critic_updates"] += 1

        advantages, td_errors = self._advantages(critic, trajectories)
        surrogate = SurrogateBatch.build(
            batch.states, batch.actions, batch.log_probs, advantages, td_errors, self.settings.regularizer
        )
        if self.settings.algorithm == "trpo":
            updated = self._trpo_step(surrogate)
        else:
            updated = self._ppo_step(surrogate)
        if not self.policy.is_finite():
            raise NumericalError("policy parameters became non-finite")
        # eta only decays when the policy actually moved
        if updated:
            self._after_actor_update()
        self.progress += 1

    def _trpo_step(self, surrogate: SurrogateBatch) -> bool:
        result = trpo_update(
            self.policy,
            surrogate,
            self.eta,
            kl_bound=self.settings.kl_bound,
            cg_iterations=self.settings.cg_iterations,
            cg_damping=self.settings.cg_damping,
            max_backtracks=self.settings.max_backtracks,
        )
        if result.accepted:
            self.stats["accepted_kls"].append(result.kl)
        else:
            self.stats["rejected_updates"] += 1
        self.policy = result.policy
        logger.debug("trpo_iteration", iteration=self.progress, accepted=result.accepted, kl=result.kl)
        return result.accepted

    def _ppo_step(self, surrogate: SurrogateBatch) -> bool:
        size = len(surrogate)
        for _ in range(self.settings.epochs):
            order = self.streams.replay.permutation(size)
            for start in range(0, size, self.settings.minibatch_size):
                minibatch = surrogate.subset(order[start : start + self.settings.minibatch_size])
                gradient = ppo_gradient(self.policy, minibatch, self.eta, self.settings.clip_epsilon)
                theta, self.actor_adam = adam_step(self.actor_adam, self.policy.theta, gradient, maximize=True)
                self.policy = self.policy.with_params(theta)
        return True

    def td_errors(self, batch: TransitionBatch) -> np.ndarray:
        return td_errors_v(self.critics[self.active_critic], batch, self.env.gamma)

    def max_accepted_kl(self) -> Optional[float]:
        kls = self.stats["accepted_kls"]
        return max(kls) if kls else None

    def get_stats(self):
        stats = super().get_stats()
        stats["accepted_kls"] = list(self.stats["accepted_kls"])
        return stats
