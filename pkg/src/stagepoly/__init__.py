"""Online learning with staged adaptive polynomial feature expansion."""

from .errors import StagePolyError
from .expansion import ExpansionState, compute_budget, expand_support
from .features import Example, HashConfig, Monomial
from .learner import LearnerConfig, OnlineLearner, evaluate, train, tune_learning_rate
from .serialize import load_model, save_model

__all__ = [
    "Example", "ExpansionState", "HashConfig", "LearnerConfig", "Monomial", "OnlineLearner",
    "StagePolyError", "compute_budget", "evaluate", "expand_support", "load_model",
    "save_model", "train", "tune_learning_rate",
]
__version__ = "0.1.0"
