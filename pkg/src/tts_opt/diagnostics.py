"""Rate fitting, envelope checks and brute-force oracles for the step-size lemmas."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, PreconditionFailed, UnsupportedExponent


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    burn_in: int
    n_points: int


def _usable(records, burn_in):
    ks, ms = [], []
    for r in records:
        if r.k < burn_in or r.metric is None or not r.stable:
            continue
        m = float(r.metric)
        if math.isfinite(m) and m > 0.0:
            ks.append(r.k)
            ms.append(m)
    return np.asarray(ks, dtype=float), np.asarray(ms, dtype=float)


def fit_rate(records, burn_in: int = 0) -> RateFit:
    """Least-squares line through ``(log(k+1), log metric)`` after ``burn_in``."""
    ks, ms = _usable(records, burn_in)
    if ks.size < 2 or np.unique(ks).size < 2:
        raise InsufficientData("need at least two positive metric values after burn-in")
    x = np.log(ks + 1.0)
    y = np.log(ms)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, int(burn_in), int(ks.size))


def envelope_ratios(records, exponent: float = -2.0 / 3.0, log_power: int = 2,
                    burn_in: int = 0):
    """``metric_k / ((k+1)^exponent log^p(k+1))`` on usable records with ``k >= max(burn_in, 1)``."""
    ks, ms = _usable(records, max(burn_in, 1))
    env = (ks + 1.0) ** exponent * np.log(ks + 1.0) ** log_power
    return ks, ms / env


def envelope_ratio_check(records, exponent: float = -2.0 / 3.0, log_power: int = 2,
                         burn_in: int = 0, slack: float = 1.05) -> bool:
    """True iff the envelope ratio never climbs above ``slack`` times its running minimum."""
    if exponent >= 0:
        raise ValueError("exponent must be negative")
    ks, ratio = envelope_ratios(records, exponent, log_power, burn_in)
    if ratio.size < 2:
        raise InsufficientData("need at least two usable records after burn-in")
    running_min = np.minimum.accumulate(ratio)
    # a relative 1e-12 absorbs rounding in ratios that are exactly constant
    return bool(np.all(ratio[1:] <= slack * running_min[:-1] * (1.0 + 1e-12)))


def median_curve(runs: Sequence[Sequence]) -> list:
    """Per-iteration median metric across seeds, as records (missing where any seed is missing)."""
    from .engine import RunRecord

    n = min(len(r) for r in runs)
    out = []
    for k in range(n):
        vals = [r[k].metric for r in runs]
        ok = all(v is not None for v in vals) and all(r[k].stable for r in runs)
        base = runs[0][k]
        out.append(RunRecord(base.k, base.alpha, base.beta,
                             float(np.median(vals)) if ok else None, None, ok))
    return out


def records_from_curve(values, start: int = 0) -> list:
    from .engine import RunRecord

    return [RunRecord(start + i, float("nan"), float("nan"),
                      None if (v is None or not math.isfinite(v)) else float(v), None, True)
            for i, v in enumerate(values)]


# --- two-time-scale lemma -----------------------------------------------------


def _ratio(p, q, name, k):
    if p == 0.0:
        return 0.0
    if q <= 0.0:
        raise PreconditionFailed(f"{name}: division by d_k = 0 with a nonzero numerator", k)
    return p / q


def _check_sequences(seqs, k):
    for name, s in seqs.items():
        if len(s) < k + 1:
            raise PreconditionFailed(f"sequence {name} shorter than k+1", None)
        if np.any(np.asarray(s[: k + 1]) < 0):
            raise PreconditionFailed(f"sequence {name} must be non-negative", int(np.argmax(np.asarray(s[: k + 1]) < 0)))


def tts_lemma_oracle(case, a, b, c, d, e, f, x0: float, y0: float, tau: int, k: int,
                     A_const: Optional[float] = None, drain=None,
                     require_bd_monotone: bool = False):
    """Iterate the worst-case recursions and compare with the lemma's bound.

    Case ``A`` runs ``x+ = (1 - a)x + b y + c`` and compares ``x_k`` with the
    contraction bound started at ``tau``. Case ``B`` runs the expanding
    recursion ``x+ = (1 + a)x + b y + c - u`` where ``u_t`` removes the fraction
    ``drain[t]`` (default 1) of the available mass, which keeps ``u`` at its
    ceiling, and compares ``sum_{t=tau}^{k} u_t`` with the summed bound.
    ``0/0`` ratios (``a_k = d_k = 0``) are read as 0.

    The case B bound also needs ``b_k/d_k`` non-increasing, which its
    hypotheses omit; ``require_bd_monotone=True`` adds that condition.

    Returns ``(holds, lhs, rhs)``.
    """
    case = str(case).upper()
    if case not in ("A", "B"):
        raise ValueError("case must be 'A' or 'B'")
    if not 0 <= tau <= k:
        raise PreconditionFailed("0 <= tau <= k")
    seqs = {"a": a, "b": b, "c": c, "d": d, "e": e, "f": f}
    _check_sequences(seqs, k)
    a, b, c, d, e, f = (np.asarray(s, dtype=float) for s in (a, b, c, d, e, f))
    if x0 < 0 or y0 < 0:
        raise PreconditionFailed("x_0, y_0 must be non-negative")

    r = np.array([_ratio(a[t], d[t], "a_k/d_k", t) for t in range(k + 1)])
    for t in range(k):
        if r[t + 1] > r[t] * (1 + 1e-15) + 1e-300:
            raise PreconditionFailed("a_{k+1}/d_{k+1} <= a_k/d_k", t + 1)
    if np.any(r > 1.0 + 1e-15):
        raise PreconditionFailed("a_k/d_k <= 1", int(np.argmax(r > 1.0 + 1e-15)))

    if case == "B" and require_bd_monotone:
        q = np.array([_ratio(b[t], d[t], "b_k/d_k", t) for t in range(k + 1)])
        for t in range(k):
            if q[t + 1] > q[t] * (1 + 1e-15) + 1e-300:
                raise PreconditionFailed("b_{k+1}/d_{k+1} <= b_k/d_k", t + 1)

    if case == "A":
        if A_const is None:
            raise PreconditionFailed("case A needs the constant A")
        A = float(A_const)
        for t in range(k + 1):
            if A * a[t] - b[t] - A * a[t] * r[t] < -1e-15:
                raise PreconditionFailed("A a_k - b_k - A a_k^2/d_k >= 0", t)
            if A * r[t] * e[t] > a[t] / 2 + 1e-15:
                raise PreconditionFailed("A a_k e_k / d_k <= a_k / 2", t)
        x, y = float(x0), float(y0)
        xs, ys = [x], [y]
        for t in range(k):
            x, y = (1 - a[t]) * x + b[t] * y + c[t], (1 - d[t]) * y + e[t] * x + f[t]
            if x < 0 or y < 0:
                raise PreconditionFailed("x_k, y_k must stay non-negative", t + 1)
            xs.append(x)
            ys.append(y)
        lhs = xs[k]
        factors = 1.0 - a / 2.0
        prod = 1.0
        rhs_tail = 0.0
        # rhs = (x_tau + A r_tau y_tau) prod_{tau}^{k-1} + sum_l (c_l + A r_l f_l) prod_{l+1}^{k-1}
        for ell in range(k - 1, tau - 1, -1):
            rhs_tail += (c[ell] + A * r[ell] * f[ell]) * prod
            prod *= factors[ell]
        rhs = (xs[tau] + A * r[tau] * ys[tau]) * prod + rhs_tail
        return bool(lhs <= rhs + 1e-12), float(lhs), float(rhs)

    lam = np.ones(k + 1) if drain is None else np.asarray(drain, dtype=float)
    if lam.size < k + 1 or np.any(lam[: k + 1] < 0) or np.any(lam[: k + 1] > 1):
        raise PreconditionFailed("drain fractions must lie in [0, 1]")
    x, y = float(x0), float(y0)
    xs, ys, us = [x], [y], []
    for t in range(k + 1):
        avail = (1 + a[t]) * x + b[t] * y + c[t]
        u = lam[t] * avail
        us.append(u)
        x, y = avail - u, (1 - d[t]) * y + e[t] * x + f[t]
        if y < 0:
            raise PreconditionFailed("x_k, y_k must stay non-negative", t + 1)
        xs.append(x)
        ys.append(y)
    lhs = float(sum(us[tau: k + 1]))
    bed = np.array([_ratio(b[t] * e[t], d[t], "b_k e_k/d_k", t) for t in range(k + 1)])
    bfd = np.array([_ratio(b[t] * f[t], d[t], "b_k f_k/d_k", t) for t in range(k + 1)])
    S = float(np.sum(a[tau: k + 1] + bed[tau: k + 1]))
    growth = 1.0 + S * math.exp(S)
    base = xs[tau] + _ratio(b[tau] * ys[tau], d[tau], "b_tau y_tau/d_tau", tau) \
        + float(np.sum(c[tau: k + 1] + bfd[tau: k + 1]))
    rhs = growth * base
    return bool(lhs <= rhs + 1e-12), lhs, float(rhs)


def random_admissible(case, rng: np.random.Generator, k_max: int = 60,
                      bd_monotone: bool = False):
    """Draw one admissible instance; returns keyword arguments for the oracle.

    With ``bd_monotone`` the case B draw also makes ``b_k/d_k`` non-increasing.
    """
    case = str(case).upper()
    k = int(rng.integers(1, k_max + 1))
    tau = int(rng.integers(0, k + 1))
    n = k + 1
    d = rng.uniform(0.05, 1.0, n)
    r0 = rng.uniform(0.01, 1.0)
    r = r0 * np.minimum.accumulate(rng.uniform(0.2, 1.0, n))
    a = r * d
    c = rng.uniform(0, 0.1, n) * rng.integers(0, 2)
    f = rng.uniform(0, 0.1, n) * rng.integers(0, 2)
    x0, y0 = float(rng.uniform(0, 2)), float(rng.uniform(0, 2))
    kw = dict(case=case, a=a, c=c, d=d, f=f, x0=x0, y0=y0, tau=tau, k=k)
    if case == "A":
        A = float(rng.uniform(0.1, 5.0))
        # b_k <= A a_k (1 - a_k/d_k), e_k <= d_k / (2A); take random fractions of the caps
        b = rng.uniform(0, 1, n) * A * a * (1 - r)
        e = rng.uniform(0, 1, n) * d / (2 * A)
        kw.update(b=b, e=e, A_const=A)
    else:
        if bd_monotone:
            b = rng.uniform(0, 0.5) * np.minimum.accumulate(rng.uniform(0.2, 1.0, n)) * d
        else:
            b = rng.uniform(0, 0.5, n)
        kw.update(b=b, e=rng.uniform(0, 0.5, n) * d,
                  drain=rng.uniform(0, 1, n) if rng.random() < 0.5 else None,
                  require_bd_monotone=bd_monotone)
    return kw


def tts_lemma_campaign(case, n_instances: int = 1000, seed: int = 0,
                       bd_monotone: bool = False):
    """Run the oracle on random admissible instances; returns the list of failures."""
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(n_instances):
        kw = random_admissible(case, rng, bd_monotone=bd_monotone)
        holds, lhs, rhs = tts_lemma_oracle(**kw)
        if not holds:
            failures.append((i, lhs, rhs))
    return failures


# --- sum-integral bounds ------------------------------------------------------


def _power_sum(u, k):
    t = np.arange(1, k + 2, dtype=float)
    return math.fsum(t ** (-u)), t


def sum_integral_bound_check(u: float, k: int) -> bool:
    """Check the closed-form bounds on ``sum_{t=0}^{k} (t+1)^{-u}`` at one ``(u, k)``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    u = float(u)
    tol = 1e-12
    if 0.0 < u < 1.0:
        s, _ = _power_sum(u, k)
        C_u = 1.0 - 2.0 ** (-(1.0 - u))
        hi = (k + 1) ** (1.0 - u) / (1.0 - u)
        return bool(C_u * hi <= s * (1 + tol) and s <= hi * (1 + tol))
    if u > 1.0:
        s, t = _power_sum(u, k)
        s_log = math.fsum(np.log(t) ** 2 * t ** (-u))
        ok_plain = s <= u / (u - 1.0) * (1 + tol)
        ok_log = s_log <= ((u - 1.0) ** 3 + 2.0) / (u - 1.0) ** 3 * (1 + tol)
        return bool(ok_plain and ok_log)
    if u == 1.0:
        s, _ = _power_sum(u, k)
        return bool(s <= math.log(k + 2) / math.log(2) * (1 + tol))
    if -1.0 <= u < 0.0:
        s, _ = _power_sum(u, k)
        return bool(s <= (k + 1) ** (1.0 - u) / ((1.0 - u) / 2.0) * (1 + tol))
    raise UnsupportedExponent(f"no bound for u = {u}")


SUM_INTEGRAL_GRID = {
    "u": [0.1, 0.25, 0.4, 0.5, 0.6, 2.0 / 3.0, 0.9, 0.99, 1.0, 1.01, 1.1, 4.0 / 3.0, 1.5,
          5.0 / 3.0, 2.0, 3.0, 5.0, -1.0, -0.5, -0.1],
    "k": [0, 1, 2, 5, 10, 100, 1000, 10_000, 100_000],
}


def sum_integral_grid():
    """Every ``(u, k)`` pair of the bundled grid with its check result."""
    return [(u, k, sum_integral_bound_check(u, k))
            for u in SUM_INTEGRAL_GRID["u"] for k in SUM_INTEGRAL_GRID["k"]]


def burn_in_from_records(records, mix_C: float = 1.0) -> int:
    """Default burn-in recomputed from the logged step sizes.

    Same rule as ``schedules.burn_in_index`` (first ``k`` with
    ``tau_k^2 beta_{k - tau_k} < 1``, capped at 10% of the run) but read off
    the ``alpha`` and ``beta`` columns, so a CSV alone suffices.
    """
    n = len(records)
    cap = max(0, int(0.1 * n))
    for k in range(cap):
        a_k = records[k].alpha
        tau = max(1, math.ceil(round(mix_C * math.log(1.0 / a_k), 12))) if 0.0 < a_k <= 1.0 else 1
        if k - tau < 0:
            continue
        if tau * tau * records[k - tau].beta < 1.0:
            return records[k].k
    return records[cap].k if cap < n else cap
