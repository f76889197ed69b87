"""Two-time-scale stochastic gradient descent under controlled Markovian sampling."""
from .engine import GroundTruth, Observation, OptState, RunRecord, TwoTimescaleProblem, run, step
from .schedules import Kind, Regime, StepSchedule, mixing_time, regime_schedule

__version__ = "0.1.0"

__all__ = [
    "GroundTruth", "Observation", "OptState", "RunRecord", "TwoTimescaleProblem", "run", "step",
    "Kind", "Regime", "StepSchedule", "mixing_time", "regime_schedule", "__version__",
]
