"""TabQL: Q-learning with in-context Bellman inference over replay contexts.

A teacher Q-network warms up on the environment and labels every stored
transition with its current value estimates; control then hands over to a
frozen in-context regressor that predicts action values directly from a
window of recent labeled experience. Exact dynamic-programming oracles and
an instrumented error ledger make the method's error decomposition and
convergence bounds numerically checkable on small tasks.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .engine import GateConfig, RefitConfig, run
from .envs import make_env
from .regressors import RegressorKind

__all__ = [
    "ExperimentConfig",
    "GateConfig",
    "RefitConfig",
    "RegressorKind",
    "load_config",
    "make_env",
    "run",
    "__version__",
]
