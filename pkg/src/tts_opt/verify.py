"""Self-check battery run by ``tts-opt verify``.

Each check raises ``CheckFailed`` with a short reason or returns a one-line
summary. ``run_battery`` never lets one failing check hide the others.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diagnostics, lqr, markov, mdp, schedules, testbeds


class CheckFailed(AssertionError):
    pass


def _expect(cond, msg):
    if not cond:
        raise CheckFailed(msg)


def _rng():
    return np.random.default_rng(20240601)


def _instances(n=4):
    rng = _rng()
    out = [lqr.reference_instance()]
    for d1, d2 in [(1, 1), (2, 1), (3, 2)][: n - 1]:
        out.append(lqr.random_instance(rng, d1, d2))
    return out


def check_lyapunov_residual():
    rng = _rng()
    worst = 0.0
    for n in (1, 2, 3, 5):
        F = rng.standard_normal((n, n))
        F *= 0.9 / np.linalg.norm(F, 2)
        G = rng.standard_normal((n, n))
        S = G @ G.T + np.eye(n)
        X = lqr.lyapunov(F, S)
        worst = max(worst, lqr.lyapunov_residual(F, S, X) / np.linalg.norm(X))
    _expect(worst < 1e-10, f"relative Lyapunov residual {worst:.2e}")
    return f"max relative residual {worst:.1e}"


def check_dare_residual():
    worst = 0.0
    for inst in _instances():
        sol = lqr.solve_dare(inst)
        worst = max(worst, lqr.riccati_residual(inst, sol.P))
    _expect(worst < 1e-10, f"Riccati residual {worst:.2e}")
    return f"max residual {worst:.1e}"


def check_svec_isometry():
    rng = _rng()
    worst = 0.0
    for n in (1, 2, 4, 5):
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, n))
        A, B = A + A.T, B + B.T
        worst = max(worst, abs(lqr.svec(A) @ lqr.svec(B) - np.trace(A @ B)),
                    float(np.max(np.abs(lqr.smat(lqr.svec(A)) - A))))
    _expect(worst < 1e-12, f"svec deviation {worst:.2e}")
    return f"max deviation {worst:.1e}"


def check_gradient_fd():
    rng = _rng()
    worst = 0.0
    for inst in _instances():
        K = lqr.random_stable_gain(inst, rng)
        g = lqr.gradient_J(inst, K)
        fd = np.zeros_like(K)
        h = 1e-6
        for idx in np.ndindex(*K.shape):
            E = np.zeros_like(K)
            E[idx] = h
            fd[idx] = (lqr.cost_J(inst, K + E) - lqr.cost_J(inst, K - E)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    _expect(worst < 1e-5, f"analytic gradient vs finite differences: relative error {worst:.2e}")
    return f"max relative error {worst:.1e}"


def check_natural_gradient_zero():
    worst = 0.0
    for inst in _instances():
        sol = lqr.solve_dare(inst)
        worst = max(worst, float(np.linalg.norm(lqr.natural_gradient_E(inst, sol.K))))
    _expect(worst < 1e-8, f"||E_K*|| = {worst:.2e}")
    return f"max ||E_K*|| {worst:.1e}"


def check_pl_inequality():
    rng = _rng()
    inst = lqr.reference_instance()
    dare = lqr.solve_dare(inst)
    for _ in range(20):
        K = lqr.random_stable_gain(inst, rng)
        lhs, rhs, ok = lqr.pl_inequality_check(inst, K, dare)
        _expect(ok, f"gradient domination fails: {lhs:.4g} > {rhs:.4g}")
    return "20 random stable gains"


def check_sigma_bounds():
    rng = _rng()
    inst = lqr.reference_instance()
    for _ in range(20):
        K = lqr.random_stable_gain(inst, rng)
        eig, lo, hi, ok = lqr.sigma_bounds_check(inst, K)
        _expect(ok, f"Sigma_K eigenvalues {eig} outside [{lo:.4g}, {hi:.4g}]")
    return "20 random stable gains"


def check_bellman_fixed_point():
    """Expected Bellman residual at the exact critic vanishes for every (x, u)."""
    rng = _rng()
    worst = 0.0
    for inst in _instances():
        K = lqr.random_stable_gain(inst, rng)
        Om = lqr.omega_K(inst, K)
        J = lqr.cost_J(inst, K)
        d1 = inst.d1
        Kt = np.vstack([np.eye(d1), -K])          # z' = Kt x' + (0, sigma v)
        Om22 = Om[d1:, d1:]
        next_form = Kt.T @ Om @ Kt
        for _ in range(5):
            x = rng.standard_normal(d1)
            u = rng.standard_normal(inst.d2)
            z = np.concatenate([x, u])
            mean_x2 = inst.A @ x + inst.B @ u
            e_next = (mean_x2 @ next_form @ mean_x2 + np.trace(next_form @ inst.Psi)
                      + inst.sigma ** 2 * np.trace(Om22))
            cost = x @ inst.Q @ x + u @ inst.R @ u
            res = z @ Om @ z - e_next + J - cost
            worst = max(worst, abs(res) / max(1.0, abs(cost)))
    _expect(worst < 1e-9, f"expected Bellman residual {worst:.2e}")
    return f"max residual {worst:.1e}"


def check_mdp_consistency():
    fixture = mdp.TabularMdp(
        P=[[[0.9, 0.1], [0.2, 0.8]], [[0.7, 0.3], [0.05, 0.95]]],
        R=[[1.0, -0.5], [-1.0, 0.5]], features=np.eye(2))
    rng = _rng()
    worst_root = worst_grad = worst_fd = 0.0
    for _ in range(5):
        th = rng.standard_normal(4)
        om = mdp.critic_root(fixture, th)
        worst_root = max(worst_root, float(np.max(np.abs(mdp.expected_G(fixture, th, om)))))
        g = mdp.exact_policy_gradient(fixture, th)
        worst_grad = max(worst_grad, float(np.max(np.abs(mdp.expected_H(fixture, th, om) + g))))
        h = 1e-6
        fd = np.array([(mdp.exact_avg_reward(fixture, th + h * e)
                        - mdp.exact_avg_reward(fixture, th - h * e)) / (2 * h) for e in np.eye(4)])
        worst_fd = max(worst_fd, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12)))
    _expect(worst_root < 1e-10, f"E[G] at the critic root: {worst_root:.2e}")
    _expect(worst_grad < 1e-10, f"E[H] + grad J at the root: {worst_grad:.2e}")
    _expect(worst_fd < 1e-5, f"policy gradient vs finite differences: {worst_fd:.2e}")
    return f"root {worst_root:.1e}, gradient {worst_grad:.1e}, fd {worst_fd:.1e}"


def check_testbed_consistency():
    rng = _rng()
    worst = 0.0
    for regime in schedules.Regime:
        for d, r in ((2, 2), (3, 2)):
            spec = testbeds.make_testbed_spec(regime, d, r, seed=3)
            for _ in range(5):
                th = rng.standard_normal(d)
                om = spec.omega_star(th)
                worst = max(worst, float(np.max(np.abs(spec.expected_G(th, om)))),
                            float(np.max(np.abs(spec.expected_H(th, om) - spec.grad_f(th)))))
    _expect(worst < 1e-10, f"oracle consistency error {worst:.2e}")
    return f"max error {worst:.1e}"


def check_stationary_law():
    worst = 0.0
    for p, q in ((0.1, 0.5), (0.5, 0.5), (0.9, 0.05)):
        P = np.array([[1 - p, p], [q, 1 - q]])
        mu = markov.stationary_distribution(P)
        worst = max(worst, float(np.max(np.abs(mu - np.array([q, p]) / (p + q)))))
    _expect(worst < 1e-9, f"stationary law error {worst:.2e}")
    return f"max error {worst:.1e}"


def check_mixing_time():
    s = schedules.StepSchedule(alpha0=0.01, beta0=0.02, a=1.0, b=2.0 / 3.0, mix_C=2.5)
    tau = schedules.mixing_time(s, 0)
    _expect(tau == 12, f"tau for C=2.5, alpha=0.01 is {tau}, expected 12")
    s = schedules.StepSchedule(alpha0=float(np.exp(-3.0)), beta0=1.0)
    tau = schedules.mixing_time(s, 0)
    _expect(tau == 3, f"tau for alpha=e^-3 is {tau}, expected 3")
    return "tau(2.5, 0.01) = 12, tau(1, e^-3) = 3"


def check_lemma_a():
    fails = diagnostics.tts_lemma_campaign("A", 300, seed=1)
    _expect(not fails, f"{len(fails)} case A violations, first {fails[:1]}")
    return "300 instances"


def check_lemma_b_monotone():
    fails = diagnostics.tts_lemma_campaign("B", 300, seed=1, bd_monotone=True)
    _expect(not fails, f"{len(fails)} case B violations, first {fails[:1]}")
    return "300 instances with b_k/d_k non-increasing"


def check_sum_integral():
    bad = [(u, k) for u, k, ok in diagnostics.sum_integral_grid() if not ok]
    _expect(not bad, f"bound fails at (u, k) = {bad[:3]}")
    return f"{len(diagnostics.SUM_INTEGRAL_GRID['u']) * len(diagnostics.SUM_INTEGRAL_GRID['k'])} grid points"


def check_backend_equivalence():
    spec = testbeds.make_testbed_spec("strongly_convex", 2, 2, seed=0)
    sched = schedules.regime_schedule("strongly_convex", 4.0, 8.0)
    a = testbeds.simulate(spec, sched, 2000, [0, 1], backend="numba")
    b = testbeds.simulate(spec, sched, 2000, [0, 1], backend="numpy")
    err = float(np.max(np.abs(a.theta - b.theta)))
    _expect(err < 1e-10, f"numba and numpy iterates differ by {err:.2e}")
    return f"max difference {err:.1e}"


@dataclass(frozen=True)
class Check:
    name: str
    fn: Callable[[], str]


CHECKS = tuple(Check(name[len("check_"):], fn) for name, fn in list(globals().items())
               if name.startswith("check_") and callable(fn))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def run_battery(pattern: str | None = None) -> list:
    results = []
    for chk in CHECKS:
        if pattern and pattern not in chk.name:
            continue
        t0 = time.perf_counter()
        try:
            detail, ok = chk.fn(), True
        except CheckFailed as exc:
            detail, ok = str(exc), False
        except Exception as exc:  # a crash is a failure, not an abort of the battery
            detail, ok = f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(chk.name, ok, detail, time.perf_counter() - t0))
    return results
