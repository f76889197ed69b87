"""Generic two-time-scale stochastic gradient iteration.

One step maps ``(theta, omega, X)`` to

    theta' = theta - alpha_k * H(theta, omega, X)
    omega' = omega - beta_k  * G(theta', omega, X)
    X'     ~ P(. | X, theta')

G is evaluated at the *updated* decision variable. The engine never projects
or clips; stability safeguards are the job of the monitor passed to ``run``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import Aborted, KernelFailure, NonFinite
from .markov import ControlledKernel
from .schedules import StepSchedule


@dataclass(frozen=True)
class OptState:
    theta: np.ndarray
    omega: np.ndarray
    sample: Any
    k: int = 0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        omega = np.array(self.omega, dtype=float).reshape(-1)
        theta.flags.writeable = False
        omega.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "omega", omega)
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega))):
            raise NonFinite(f"non-finite iterate at k={self.k}")


@dataclass(frozen=True)
class GroundTruth:
    """Diagnostics-only knowledge of the solution; the update loop never reads it."""

    theta_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    omega_star: Optional[Callable[[np.ndarray], np.ndarray]] = None
    f: Optional[Callable[[np.ndarray], float]] = None
    grad_f: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class TwoTimescaleProblem:
    H: Callable[[np.ndarray, np.ndarray, Any], np.ndarray]
    G: Callable[[np.ndarray, np.ndarray, Any], np.ndarray]
    kernel: ControlledKernel
    truth: Optional[GroundTruth] = None
    name: str = ""
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunRecord:
    k: int
    alpha: float
    beta: float
    metric: Optional[float]
    aux_error: Optional[float] = None
    stable: bool = True


@dataclass(frozen=True)
class Observation:
    """What a monitor reports about the iterate it was shown."""

    metric: Optional[float] = None
    aux_error: Optional[float] = None
    stable: bool = True


# ``monitor(state, evaluate)``: stability must always be reported; the metric
# and auxiliary error only when ``evaluate`` is true (the evaluation stride).
Monitor = Callable[[OptState, bool], Observation]


def _all_finite(v: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(v)))


def step(state: OptState, problem: TwoTimescaleProblem, schedule: StepSchedule,
         rng: np.random.Generator) -> OptState:
    k = state.k
    a_k = schedule.alpha(k)
    b_k = schedule.beta(k)
    if a_k > b_k:
        warnings.warn(f"alpha_k > beta_k at k={k}", RuntimeWarning, stacklevel=2)

    theta_new = state.theta - a_k * np.asarray(problem.H(state.theta, state.omega, state.sample), dtype=float)
    if not _all_finite(theta_new):
        raise NonFinite(f"theta update produced a non-finite value at k={k}")
    omega_new = state.omega - b_k * np.asarray(problem.G(theta_new, state.omega, state.sample), dtype=float)
    if not _all_finite(omega_new):
        raise NonFinite(f"omega update produced a non-finite value at k={k}")

    try:
        sample_new = problem.kernel.sample(state.sample, theta_new, rng)
    except (NonFinite, KernelFailure):
        raise
    except Exception as exc:  # sampler bugs surface as a typed failure
        raise KernelFailure(f"sampling failed at k={k}: {exc}") from exc
    return OptState(theta_new, omega_new, sample_new, k + 1)


def run(problem: TwoTimescaleProblem, schedule: StepSchedule, init: OptState,
        n_iters: int, monitor: Optional[Monitor] = None,
        rng: Optional[np.random.Generator] = None, *, seed: Optional[int] = None,
        abort_on_unstable: bool = True, eval_stride: int = 1,
        return_state: bool = False):
    """Run ``n_iters`` steps from ``init``, logging one record per step.

    Record ``k`` describes the iterate *entering* step ``k`` together with the
    step sizes used by that step, so record 0 is the initial point.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be at least 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    if eval_stride < 1:
        raise ValueError("eval_stride must be at least 1")

    records: list[RunRecord] = []
    state = init
    for _ in range(n_iters):
        k = state.k
        obs = Observation()
        if monitor is not None:
            obs = monitor(state, (k - init.k) % eval_stride == 0)
        if not obs.stable and abort_on_unstable:
            raise Aborted(k, records)
        records.append(RunRecord(k, schedule.alpha(k), schedule.beta(k),
                                 _clean(obs.metric), _clean(obs.aux_error), bool(obs.stable)))
        state = step(state, problem, schedule, rng)
    if return_state:
        return records, state
    return records


def _clean(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def truth_monitor(problem: TwoTimescaleProblem, metric: str = "dist2") -> Monitor:
    """Monitor computed from the problem's ground-truth record.

    ``metric`` is one of ``dist2`` (squared distance to ``theta_star``),
    ``gap`` (``f - f_star``) or ``grad2`` (squared gradient norm).
    """
    truth = problem.truth
    if truth is None:
        raise ValueError("problem carries no ground truth")

    def mon(state: OptState, evaluate: bool = True) -> Observation:
        if not evaluate:
            return Observation()
        th = state.theta
        if metric == "dist2":
            val = float(np.sum((th - truth.theta_star) ** 2))
        elif metric == "gap":
            val = float(truth.f(th) - truth.f_star)
        elif metric == "grad2":
            val = float(np.sum(truth.grad_f(th) ** 2))
        else:
            raise ValueError(f"unknown metric {metric!r}")
        aux = None
        if truth.omega_star is not None:
            aux = float(np.sum((state.omega - truth.omega_star(th)) ** 2))
        return Observation(val, aux, True)

    return mon
