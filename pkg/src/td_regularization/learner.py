#!/usr/bin/env python3
"""
Common surface of the actor-critic learners driven by the harness.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from src.td_regularization.env_core import EnvironmentContract, TransitionBatch
from src.td_regularization.penalty import PenaltySchedule, eta_step

STREAM_NAMES = ("init", "env", "policy", "replay", "misc")


@dataclass
class TrialStreams:
    """Independent generators spawned from one seed.

    Algorithms compared under the same seed draw initial parameters,
    environment noise and exploration noise from identical streams.
    """

    init: np.random.Generator
    env: np.random.Generator
    policy: np.random.Generator
    replay: np.random.Generator
    misc: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "TrialStreams":
        children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
        return cls(*(np.random.default_rng(child) for child in children))


class Learner(ABC):
    """One trial's actor, critic(s), penalty schedule and optimizer state.

    ``progress`` counts iterations for batch learners and environment steps
    for the online learners; the harness evaluates on that axis.
    """

    def __init__(
        self,
        env: EnvironmentContract,
        schedule: PenaltySchedule,
        streams: TrialStreams,
        regularized: bool,
    ):
        self.env = env
        self.schedule = schedule
        self.streams = streams
        self.regularized = regularized
        self.progress = 0
        self.stats: Dict[str, Any] = {
            "actor_updates": 0,
            "critic_updates": 0,
        }

    @property
    def eta(self) -> float:
        """Penalty weight of the next actor update (0 for unregularized learners)"""
        return self.schedule.eta if self.regularized else 0.0

    def _after_actor_update(self) -> None:
        self.schedule = eta_step(self.schedule)
        self.stats["actor_updates"] += 1

    @abstractmethod
    def iterate(self) -> None:
        """Advance by one unit of ``progress``"""

    @abstractmethod
    def td_errors(self, batch: TransitionBatch) -> np.ndarray:
        """One-step TD errors of the learned critic on exploration-free transitions"""

    def q_values(self, states: np.ndarray, actions: np.ndarray) -> Optional[np.ndarray]:
        """Q estimates when the learner has a Q-critic"""
        return None

    def parameters_finite(self) -> bool:
        return bool(self.policy.is_finite())

    def get_stats(self) -> Dict[str, Any]:
        return {**self.stats, "progress": self.progress, "eta": self.eta}
