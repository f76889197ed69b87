"""Step-size sequences and mixing-time rules.

Two families are supported: polynomially decaying steps
``alpha_k = alpha0 / (k+1)**a``, ``beta_k = beta0 / (k+1)**b``, and
horizon-aware constant steps for the convex regime.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, MissingHorizon


class Kind(str, enum.Enum):
    POWER_LAW = "power_law"
    HORIZON_CONSTANT = "horizon_constant"


class Regime(str, enum.Enum):
    STRONGLY_CONVEX = "strongly_convex"
    CONVEX = "convex"
    PL = "pl"
    NONCONVEX = "nonconvex"


# (a, b) exponents of the decaying steps per objective structure.
REGIME_EXPONENTS = {
    Regime.STRONGLY_CONVEX: (1.0, 2.0 / 3.0),
    Regime.PL: (1.0, 2.0 / 3.0),
    Regime.NONCONVEX: (3.0 / 5.0, 2.0 / 5.0),
}


@dataclass(frozen=True)
class StepSchedule:
    kind: Kind = Kind.POWER_LAW
    a: float = 1.0
    b: float = 2.0 / 3.0
    alpha0: float = 0.025
    beta0: float = 0.05
    horizon: Optional[int] = None
    mix_C: float = 1.0
    mix_rho: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ConfigError("alpha0 and beta0 must be positive")
        if self.alpha0 > self.beta0:
            raise ConfigError("alpha0 must not exceed beta0")
        if self.mix_C <= 0:
            raise ConfigError("mix_C must be positive")
        if not 0.0 < self.mix_rho < 1.0:
            raise ConfigError("mix_rho must lie in (0, 1)")
        if self.kind is Kind.POWER_LAW:
            if not (0.0 < self.b <= self.a <= 1.0):
                raise ConfigError("power-law exponents need 0 < b <= a <= 1")
        else:
            if self.horizon is None or self.horizon < 3:
                raise ConfigError("horizon-constant schedule needs horizon T >= 3")

    def alpha(self, k: int) -> float:
        if self.kind is Kind.HORIZON_CONSTANT:
            return self.alpha0
        return self.alpha0 / (k + 1) ** self.a

    def beta(self, k: int) -> float:
        if self.kind is Kind.HORIZON_CONSTANT:
            return self.beta0
        return self.beta0 / (k + 1) ** self.b

    def alphas(self, n: int) -> np.ndarray:
        """Vector of ``alpha(k)`` for ``k = 0 .. n-1``."""
        if self.kind is Kind.HORIZON_CONSTANT:
            return np.full(n, self.alpha0)
        return self.alpha0 / np.arange(1, n + 1, dtype=float) ** self.a

    def betas(self, n: int) -> np.ndarray:
        if self.kind is Kind.HORIZON_CONSTANT:
            return np.full(n, self.beta0)
        return self.beta0 / np.arange(1, n + 1, dtype=float) ** self.b

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepSchedule":
        known = {"kind", "a", "b", "alpha0", "beta0", "horizon", "mix_C", "mix_rho"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown schedule fields: {sorted(extra)}")
        return cls(**d)


def alpha(s: StepSchedule, k: int) -> float:
    return s.alpha(k)


def beta(s: StepSchedule, k: int) -> float:
    return s.beta(k)


def regime_schedule(regime, alpha0: float = 1.0, beta0: float = 1.0,
                    horizon: Optional[int] = None, *, mix_C: float = 1.0,
                    mix_rho: float = 0.5) -> StepSchedule:
    """Build the step schedule matched to an objective structure.

    For the convex regime ``alpha0`` and ``beta0`` are proportionality
    constants multiplying ``1/(log(T)**0.75 * T**0.75)`` and
    ``1/(log(T)**0.5 * T**0.5)``; the problem-specific Lipschitz and
    monotonicity constants are folded into them.
    """
    regime = Regime(regime)
    if regime is Regime.CONVEX:
        if horizon is None:
            raise MissingHorizon("the convex regime needs the horizon T")
        T = float(horizon)
        logT = math.log(T)
        return StepSchedule(
            kind=Kind.HORIZON_CONSTANT, a=0.0, b=0.0,
            alpha0=alpha0 / (logT ** 0.75 * T ** 0.75),
            beta0=beta0 / (logT ** 0.5 * T ** 0.5),
            horizon=int(horizon), mix_C=mix_C, mix_rho=mix_rho,
        )
    a, b = REGIME_EXPONENTS[regime]
    return StepSchedule(kind=Kind.POWER_LAW, a=a, b=b, alpha0=alpha0,
                        beta0=beta0, horizon=horizon, mix_C=mix_C,
                        mix_rho=mix_rho)


def mixing_time(s: StepSchedule, k: int) -> int:
    """``tau_k = max(1, ceil(C * log(1/alpha_k)))``."""
    a_k = s.alpha(k)
    if not 0.0 < a_k <= 1.0:
        raise ValueError(f"mixing time needs alpha_k in (0, 1], got {a_k}")
    # round before ceil so exact integers (C=1, alpha=e^-3) are not bumped up
    raw = round(s.mix_C * math.log(1.0 / a_k), 12)
    return max(1, math.ceil(raw))


def burn_in_index(s: StepSchedule, horizon: int) -> int:
    """First ``k`` with ``tau_k**2 * beta_{k - tau_k} < 1``, capped at 10% of the horizon.

    This stands in for the burn-in constant of the convergence theorems,
    whose definition involves unknown Lipschitz constants.
    """
    cap = max(0, int(0.1 * horizon))
    for k in range(cap):
        tau = mixing_time(s, k) if s.alpha(k) <= 1.0 else 1
        if k - tau < 0:
            continue
        if tau * tau * s.beta(k - tau) < 1.0:
            return k
    return cap


def check_pl_conditions(s: StepSchedule, lambda_f: float, lambda_G: float) -> list[str]:
    """Report which of the PL-theorem step conditions fail (none are enforced)."""
    problems = []
    if s.alpha0 < max(1.0, 2.0 / lambda_f):
        problems.append("alpha0 >= max(1, 2/lambda_f)")
    if s.alpha0 / s.beta0 > lambda_G / (4.0 * lambda_f):
        problems.append("alpha0/beta0 <= lambda_G/(4 lambda_f)")
    return problems


def check_strongly_convex_conditions(s: StepSchedule, lambda_f: float,
                                     lambda_G: float) -> list[str]:
    problems = []
    if s.alpha0 < 4.0 / lambda_f:
        problems.append("alpha0 >= 4/lambda_f")
    if s.alpha0 / s.beta0 > lambda_G / (2.0 * lambda_f):
        problems.append("alpha0/beta0 <= lambda_G/(2 lambda_f)")
    return problems
