#!/usr/bin/env python3
"""
🎢 Pendulum swing-up tasks
Single pendulum (Gym equations, goal upright at q = 0) and the two-link
double pendulum (goal q = [pi/2, 0], observed through [sin q, cos q, dq]).
"""

from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np
import structlog

from src.td_regularization.env_core import EnvironmentContract
from src.td_regularization.errors import DynamicsError

logger = structlog.get_logger(__name__)


def wrap_angle(q):
    """Map angles into [-pi, pi)"""
    return (np.asarray(q, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


def wrapped_angle_distance(q, q_goal) -> np.ndarray:
    """pi - |(|q - q_goal| - pi)|, elementwise, always in [0, pi]"""
    difference = np.abs(np.asarray(q, dtype=float) - np.asarray(q_goal, dtype=float))
    return np.pi - np.abs(difference % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class SinglePendulumSpec:
    g: float = 10.0
    m: float = 1.0
    l: float = 1.0
    dt: float = 0.05
    max_speed: float = 8.0
    max_torque: float = 2.0
    train_horizon: int = 50
    eval_horizon: int = 150
    gamma: float = 0.99


@dataclass(frozen=True)
class DoublePendulumSpec:
    g: float = 9.81
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    inertia1: float = (1.0 + 0.0001) / 3.0
    inertia2: float = (1.0 + 0.0001) / 3.0
    friction: float = 2.5
    dt: float = 0.02
    max_speed: float = 50.0
    max_torque: float = 10.0
    goal: Tuple[float, float] = (np.pi / 2.0, 0.0)
    train_horizon: int = 500
    eval_horizon: int = 500
    gamma: float = 0.99
    # The printed integrator subtracts the acceleration; "plus" is semi-implicit Euler.
    velocity_sign: Literal["plus", "minus"] = "plus"


def pendulum_step(
    spec: SinglePendulumSpec, q: float, qdot: float, a: float
) -> Tuple[float, float, float]:
    torque = float(np.clip(a, -spec.max_torque, spec.max_torque))
    q = float(wrap_angle(q))
    reward = -(q ** 2) - 0.1 * qdot ** 2 - 0.001 * torque ** 2

    acceleration = (
        -3.0 * spec.g / (2.0 * spec.l) * np.sin(q + np.pi)
        + 3.0 / (spec.m * spec.l ** 2) * torque
    )
    qdot_next = float(np.clip(qdot + acceleration * spec.dt, -spec.max_speed, spec.max_speed))
    q_next = float(wrap_angle(q + qdot_next * spec.dt))
    return q_next, qdot_next, reward


def pendulum_energy(spec: SinglePendulumSpec, q: float, qdot: float) -> float:
    """Mechanical energy of the rod model behind ``pendulum_step`` (zero torque)"""
    return spec.m * spec.l ** 2 / 6.0 * qdot ** 2 + spec.m * spec.g * spec.l / 2.0 * np.cos(q)


def inertia_matrix(spec: DoublePendulumSpec, q: np.ndarray) -> np.ndarray:
    half_l2 = spec.l2 / 2.0
    cos_q2 = np.cos(q[1])
    m11 = (
        spec.m1 * (spec.l1 / 2.0) ** 2
        + spec.inertia1
        # 2 l1 (l2/2)^2 cos(q2) is kept as written; equal to 2 l1 (l2/2) cos(q2) for l2 = 1
        + spec.m2 * (spec.l1 ** 2 + half_l2 ** 2 + 2.0 * spec.l1 * half_l2 ** 2 * cos_q2)
        + spec.inertia2
    )
    m12 = spec.m2 * (half_l2 ** 2 + spec.l1 * half_l2 * cos_q2) + spec.inertia2
    m22 = spec.m2 * half_l2 ** 2 + spec.inertia2
    return np.array([[m11, m12], [m12, m22]])


def double_pendulum_forces(
    spec: DoublePendulumSpec, q: np.ndarray, qdot: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gravitational, Coriolis and viscous friction forces (f_g, f_c, f_v)"""
    half_l1, half_l2 = spec.l1 / 2.0, spec.l2 / 2.0
    cos_q1, cos_q12 = np.cos(q[0]), np.cos(q[0] + q[1])
    sin_q2 = np.sin(q[1])

    gravity = np.array([
        spec.m1 * spec.g * half_l1 * cos_q1 + spec.m2 * spec.g * (spec.l1 * cos_q1 + half_l2 * cos_q12),
        spec.m2 * spec.g * half_l2 * cos_q12,
    ])
    coriolis = np.array([
        -spec.m2 * spec.l1 * half_l2 * sin_q2 * (2.0 * qdot[0] * qdot[1] + qdot[1] ** 2),
        spec.m2 * spec.l1 * half_l2 * sin_q2 * qdot[0] ** 2,
    ])
    friction = spec.friction * np.asarray(qdot, dtype=float)
    return gravity, coriolis, friction


def double_pendulum_step(
    spec: DoublePendulumSpec, q: np.ndarray, qdot: np.ndarray, a: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, float]:
    q = wrap_angle(q)
    qdot = np.asarray(qdot, dtype=float)
    torque = np.clip(np.asarray(a, dtype=float), -spec.max_torque, spec.max_torque)
    distance = wrapped_angle_distance(q, spec.goal)
    reward = -float(distance @ distance) - 0.001 * float(torque @ torque)

    inertia = inertia_matrix(spec, q)
    if np.linalg.cond(inertia) > 1e12:
        raise DynamicsError(f"inertia matrix is numerically singular at q={q}")
    gravity, coriolis, friction = double_pendulum_forces(spec, q, qdot)
    acceleration = np.linalg.solve(inertia, torque - gravity - coriolis - friction)

    sign = 1.0 if spec.velocity_sign == "plus" else -1.0
    qdot_next = np.clip(qdot + sign * acceleration * spec.dt, -spec.max_speed, spec.max_speed)
    q_next = wrap_angle(q + qdot_next * spec.dt)
    return q_next, qdot_next, reward


class SinglePendulumEnv(EnvironmentContract):
    """Observation is the internal state [q, dq]"""

    state_dim = 2
    action_dim = 1

    def __init__(self, spec: SinglePendulumSpec = None):
        self.spec = spec or SinglePendulumSpec()
        self.horizon = max(self.spec.train_horizon, self.spec.eval_horizon)
        self.gamma = self.spec.gamma

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])

    def step(self, state, action, rng):
        q_next, qdot_next, reward = pendulum_step(self.spec, state[0], state[1], float(action[0]))
        return np.array([q_next, qdot_next]), reward


class DoublePendulumEnv(EnvironmentContract):
    """Internal state [q1, q2, dq1, dq2]; observation [sin q, cos q, dq]"""

    state_dim = 6
    action_dim = 2

    def __init__(self, spec: DoublePendulumSpec = None):
        self.spec = spec or DoublePendulumSpec()
        self.horizon = max(self.spec.train_horizon, self.spec.eval_horizon)
        self.gamma = self.spec.gamma

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([rng.uniform(-np.pi, np.pi, size=2), rng.uniform(-1.0, 1.0, size=2)])

    def step(self, state, action, rng):
        q_next, qdot_next, reward = double_pendulum_step(self.spec, state[:2], state[2:], action)
        return np.concatenate([q_next, qdot_next]), reward

    def observe(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        q, qdot = state[:2], state[2:]
        return np.concatenate([np.sin(q), np.cos(q), qdot])
