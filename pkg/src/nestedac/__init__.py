"""Nested actor-critic training toolkit for constrained cooperative stochastic games."""
from .core import NestedACState, StepSequence, TwoTimescaleSchedule
from .trainers import ALGORITHMS, EvalReport, RunLog, TrainConfig, TrainedModel, evaluate, median_over_runs, train

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "EvalReport", "NestedACState", "RunLog", "StepSequence", "TrainConfig", "TrainedModel",
    "TwoTimescaleSchedule", "evaluate", "median_over_runs", "train",
]
