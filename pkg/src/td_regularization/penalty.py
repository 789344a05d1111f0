#!/usr/bin/env python3
"""
Penalty schedule eta_n = eta0 * kappa^n, n = number of actor updates so far.
"""

from dataclasses import dataclass, replace

from src.td_regularization.errors import ConfigurationError

# Grid tested for the decay factor
KAPPA_SWEEP = (0.0, 0.1, 0.5, 0.9, 0.99, 0.999, 1.0, 1.001)


@dataclass(frozen=True)
class PenaltySchedule:
    eta0: float = 0.1
    kappa: float = 0.999
    updates: int = 0

    def __post_init__(self):
        if self.eta0 < 0.0:
            raise ConfigurationError(f"eta0 must be non-negative, got {self.eta0}")
        if self.kappa < 0.0:
            raise ConfigurationError(f"kappa must be non-negative, got {self.kappa}")

    @property
    def eta(self) -> float:
        return self.eta0 * self.kappa ** self.updates


def eta_step(schedule: PenaltySchedule) -> PenaltySchedule:
    return replace(schedule, updates=schedule.updates + 1)
