#!/usr/bin/env python3
"""
🌍 Environment core - the sample currency of every estimator
Environment contract, trajectory collection, replay memory and the
non-uniform observation-noise wrapper.
"""

from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import structlog

from src.td_regularization.errors import ConfigurationError, InsufficientDataError

logger = structlog.get_logger(__name__)

# Deterministic policies have no behavior density; this keeps log_prob finite.
DETERMINISTIC_LOG_PROB = 0.0


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    log_prob: float
    step_index: int
    is_terminal: bool = False


@dataclass
class TransitionBatch:
    """Column view of a list of transitions"""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    log_probs: np.ndarray
    step_indices: np.ndarray
    terminals: np.ndarray

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        if not transitions:
            raise InsufficientDataError("cannot build a batch from zero transitions")
        return cls(
            states=np.stack([t.state for t in transitions]),
            actions=np.stack([t.action for t in transitions]),
            rewards=np.array([t.reward for t in transitions], dtype=float),
            next_states=np.stack([t.next_state for t in transitions]),
            log_probs=np.array([t.log_prob for t in transitions], dtype=float),
            step_indices=np.array([t.step_index for t in transitions], dtype=int),
            terminals=np.array([t.is_terminal for t in transitions], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class Trajectory:
    transitions: List[Transition] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)

    def append(self, transition: Transition) -> None:
        if self.transitions and transition.step_index <= self.transitions[-1].step_index:
            raise ValueError("step_index must be strictly increasing")
        self.transitions.append(transition)

    def as_batch(self) -> TransitionBatch:
        return TransitionBatch.from_transitions(self.transitions)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions], dtype=float)

    def is_chained(self) -> bool:
        """True when every next_state equals the following state exactly"""
        return all(
            np.array_equal(prev.next_state, nxt.state)
            for prev, nxt in zip(self.transitions, self.transitions[1:])
        )


class EnvironmentContract(ABC):
    """A finite-horizon discounted MDP <S, A, P, R, mu_1> with gamma and T.

    ``state_dim`` is the dimension of what the agent observes; ``step`` works
    on the environment's internal state and is pure given the rng stream.
    """

    state_dim: int
    action_dim: int
    horizon: int
    gamma: float

    @abstractmethod
    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def step(
        self, state: np.ndarray, action: np.ndarray, rng: np.random.Generator
    ) -> Tuple[np.ndarray, float]:
        ...

    def observe(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(state, dtype=float)


class PolicyHandle(Protocol):
    action_dim: int

    def act(
        self, state: np.ndarray, rng: np.random.Generator, explore: bool = True
    ) -> Tuple[np.ndarray, Optional[float]]:
        ...


def collect_trajectory(
    env: EnvironmentContract,
    policy: PolicyHandle,
    rng: np.random.Generator,
    max_steps: int,
    *,
    policy_rng: Optional[np.random.Generator] = None,
    explore: bool = True,
    initial_state: Optional[np.ndarray] = None,
) -> Trajectory:
    """Roll the policy out for at most ``max_steps`` steps from s_1 ~ mu_1.

    ``rng`` drives the initial state, the observation noise and the
    transition noise; ``policy_rng`` (defaults to ``rng``) drives exploration.
    The last transition is flagged terminal: the cut at the step limit ends
    the episode and nothing bootstraps past it.
    """
    if max_steps < 1:
        raise ConfigurationError(f"max_steps must be >= 1, got {max_steps}")
    if policy.action_dim != env.action_dim:
        raise ConfigurationError(
            f"policy action_dim {policy.action_dim} != environment action_dim {env.action_dim}"
        )
    policy_rng = rng if policy_rng is None else policy_rng

    true_state = (
        np.asarray(initial_state, dtype=float).copy()
        if initial_state is not None
        else env.sample_initial_state(rng)
    )
    observation = env.observe(true_state, rng)
    if observation.shape != (env.state_dim,):
        raise ConfigurationError(
            f"observation shape {observation.shape} != ({env.state_dim},)"
        )

    trajectory = Trajectory()
    last_step = min(max_steps, env.horizon)
    for step_index in range(1, last_step + 1):
        action, log_prob = policy.act(observation, policy_rng, explore=explore)
        action = np.asarray(action, dtype=float).reshape(env.action_dim)
        next_true_state, reward = env.step(true_state, action, rng)
        next_observation = env.observe(next_true_state, rng)
        trajectory.append(Transition(
            state=observation,
            action=action,
            reward=float(reward),
            next_state=next_observation,
            log_prob=DETERMINISTIC_LOG_PROB if log_prob is None else float(log_prob),
            step_index=step_index,
            is_terminal=step_index == last_step,
        ))
        true_state, observation = next_true_state, next_observation

    return trajectory


class ReplayMemory:
    """FIFO experience replay; ``capacity=None`` means unbounded"""

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise ConfigurationError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.buffer: Deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.buffer)

    def push(self, transitions: Sequence[Transition]) -> None:
        self.buffer.extend(transitions)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        if len(self.buffer) < batch_size:
            raise InsufficientDataError(
                f"replay memory holds {len(self.buffer)} transitions, {batch_size} requested"
            )
        indices = rng.choice(len(self.buffer), size=batch_size, replace=False)
        return [self.buffer[i] for i in indices]


def replay_push_sample(
    memory: ReplayMemory,
    new: Sequence[Transition],
    batch_size: int,
    rng: np.random.Generator,
) -> List[Transition]:
    memory.push(new)
    return memory.sample(batch_size, rng)


def apply_observation_noise(
    s_true: np.ndarray,
    rng: np.random.Generator,
    scale: float = 0.05,
    clip_low: float = 0.1,
    clip_high: float = 200.0,
    symmetric: bool = False,
) -> np.ndarray:
    """s_obs = s_true + N(0, scale) / clip(s_true, clip_low, clip_high), elementwise.

    With ``symmetric`` the divisor uses |s_true|, so negative components are
    treated like their mirror image instead of hitting the lower clip.
    """
    s_true = np.asarray(s_true, dtype=float)
    if scale == 0.0:
        return s_true.copy()
    magnitude = np.abs(s_true) if symmetric else s_true
    divisor = np.clip(magnitude, clip_low, clip_high)
    return s_true + rng.normal(0.0, scale, size=s_true.shape) / divisor


class ObservationNoiseWrapper(EnvironmentContract):
    """Adds state-dependent observation noise; rewards still use the true state"""

    def __init__(self, env: EnvironmentContract, scale: float = 0.05, symmetric: bool = False):
        self.env = env
        self.scale = scale
        self.symmetric = symmetric
        self.state_dim = env.state_dim
        self.action_dim = env.action_dim
        self.horizon = env.horizon
        self.gamma = env.gamma

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return self.env.sample_initial_state(rng)

    def step(self, state, action, rng):
        return self.env.step(state, action, rng)

    def observe(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return apply_observation_noise(
            self.env.observe(state, rng), rng, scale=self.scale, symmetric=self.symmetric
        )

    def __getattr__(self, name):
        # Oracles and specs of the wrapped environment stay reachable.
        if name == "env":
            raise AttributeError(name)
        return getattr(self.env, name)
