"""Iterative black-box optimization with text generators in the loop."""

from .engine import Archive, LoopConfig, RunOutcome, RunStatus, archive_update, run_loop
from .problems import ContinuousProblem, FunctionName, evaluate, make_problem
from .tsp import TspInstance, tour_length

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "ContinuousProblem",
    "FunctionName",
    "LoopConfig",
    "RunOutcome",
    "RunStatus",
    "TspInstance",
    "archive_update",
    "evaluate",
    "make_problem",
    "run_loop",
    "tour_length",
]
