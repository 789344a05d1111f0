#!/usr/bin/env python3
"""
Exception hierarchy shared by the environments, learners and harness.
"""


class TdRegError(Exception):
    """Base class for every error raised by this package"""


class ConfigurationError(TdRegError, ValueError):
    """Invalid configuration or mismatched dimensions between components"""


class InsufficientDataError(TdRegError):
    """Raised when a replay memory is sampled before it holds enough transitions"""


class NumericalError(TdRegError, ArithmeticError):
    """Non-finite values or a failed numerical routine"""


class DivergenceError(NumericalError):
    """The closed-loop LQR system is unstable, so values are -inf"""


class DynamicsError(TdRegError):
    """The pendulum dynamics cannot be integrated (singular inertia matrix)"""


class DataError(TdRegError):
    """Collected data cannot be used as is, e.g. a zero behavior density"""


class UsageError(TdRegError, TypeError):
    """An estimator was called with arguments that do not match its kind"""
