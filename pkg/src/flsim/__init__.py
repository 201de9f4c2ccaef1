"""Seedable federated-learning fleet simulator with a tabular Q-learning client selector."""

from flsim.errors import (
    ConfigError,
    ContractViolation,
    InfeasibleInstance,
    TrainingDivergence,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractViolation",
    "InfeasibleInstance",
    "TrainingDivergence",
    "__version__",
]
