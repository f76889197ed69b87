import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tts_opt import lqr
from tts_opt.errors import (Aborted, DimensionMismatch, NotStabilizable, NotSymmetric,
                            Unstable)
from tts_opt.lqr import CriticState, LqrInstance
from tts_opt.schedules import StepSchedule

REF_P = np.array([[1.1321579785350424, 0.00839921755686009, -0.00186269898136928],
                    [0.00839921755686009, 1.3276217932311793, 0.01161309894985539],
                    [-0.00186269898136928, 0.01161309894985539, 1.3276452482895853]])
REF_K = np.array([[0.26408403905704286, 0.00369909376460048, -0.00392945913022242],
                    [0.02717226237333634, 0.06687930177715957, 0.06613600346559012]])
REF_J = 1.9254164622389482


def scalar(a=0.5, b=1.0, q=1.0, r=1.0, psi=1.0, sigma=0.0, rho=0.99):
    return LqrInstance(A=[[a]], B=[[b]], Q=[[q]], R=[[r]], Psi=[[psi]], sigma=sigma, rho=rho)


@pytest.fixture(scope="module")
def ref():
    return lqr.reference_instance()


@pytest.fixture(scope="module")
def ref_dare(ref):
    return lqr.solve_dare(ref)


# --- exact solvers -------------------------------------------------------------

def test_scalar_dare_closed_form():
    sol = lqr.solve_dare(scalar())
    P = (0.25 + math.sqrt(4.0625)) / 2
    assert sol.P[0, 0] == pytest.approx(P, abs=1e-12)
    assert sol.K[0, 0] == pytest.approx(0.5 * P / (P + 1), abs=1e-12)
    assert sol.K[0, 0] == pytest.approx(0.265564, abs=1e-6)
    assert 0.5 - sol.K[0, 0] == pytest.approx(0.234436, abs=1e-6)


def test_no_control_authority_reduces_to_lyapunov():
    A = np.array([[0.6, 0.2], [0.0, 0.3]])
    inst = LqrInstance(A=A, B=np.zeros((2, 1)), Q=np.eye(2), R=[[1.0]], Psi=np.eye(2))
    sol = lqr.solve_dare(inst)
    assert np.allclose(sol.K, 0.0)
    assert np.allclose(sol.P, A.T @ sol.P @ A + np.eye(2), atol=1e-10)
    assert lqr.is_stable(inst, np.array([[1e6, -1e6]]))


def test_reference_instance_regression(ref, ref_dare):
    assert np.allclose(ref_dare.P, REF_P, atol=1e-10)
    assert np.allclose(ref_dare.K, REF_K, atol=1e-10)
    assert ref_dare.J == pytest.approx(REF_J, abs=1e-10)
    assert ref_dare.residual <= 1e-10


def test_reference_instance_against_scipy(ref, ref_dare):
    P = sla.solve_discrete_are(ref.A, ref.B, ref.Q, ref.R)
    assert np.allclose(ref_dare.P, P, atol=1e-10)


def test_unstabilizable_pair_detected():
    with pytest.raises(NotStabilizable):
        lqr.solve_dare(scalar(a=1.5, b=0.0))


def test_pk_at_optimum_matches_dare(ref, ref_dare):
    assert np.allclose(lqr.solve_pk(ref, ref_dare.K), ref_dare.P, atol=1e-8)


def test_scalar_pk_sigma_and_cost():
    inst = scalar(q=1.25)
    K = np.zeros((1, 1))
    assert lqr.solve_pk(inst, K)[0, 0] == pytest.approx(5 / 3, abs=1e-12)
    assert lqr.solve_sigma(inst, K)[0, 0] == pytest.approx(4 / 3, abs=1e-12)
    assert lqr.cost_J(inst, K) == pytest.approx(5 / 3, abs=1e-12)


def test_zero_cost_gives_zero_value():
    F = np.array([[0.5, 0.1], [0.0, 0.4]])
    assert np.array_equal(lqr.lyapunov(F, np.zeros((2, 2))), np.zeros((2, 2)))


def test_memoryless_closed_loop(ref):
    K = np.array([[0.5]])
    inst = scalar(sigma=0.3)
    assert lqr.solve_sigma(inst, K)[0, 0] == pytest.approx(inst.Psi_sigma[0, 0])


def test_cost_is_trace_without_exploration():
    inst = LqrInstance(A=np.diag([0.5, 0.2]), B=np.eye(2), Q=np.eye(2), R=np.eye(2),
                       Psi=np.eye(2), sigma=0.0)
    K = np.array([[0.1, 0.0], [0.05, 0.1]])
    assert lqr.cost_J(inst, K) == pytest.approx(np.trace(lqr.solve_pk(inst, K)), rel=1e-14)


def test_optimal_gain_minimises_cost(ref, ref_dare, rng):
    assert lqr.cost_J(ref, ref_dare.K) == pytest.approx(ref_dare.J, abs=1e-12)
    for _ in range(50):
        K = ref_dare.K + 0.05 * rng.standard_normal(ref_dare.K.shape)
        if lqr.is_stable(ref, K):
            assert lqr.cost_J(ref, K) >= ref_dare.J - 1e-12


def test_natural_gradient_vanishes_at_optimum(ref, ref_dare):
    assert np.abs(lqr.natural_gradient_E(ref, ref_dare.K)).max() <= 1e-8


def test_unstable_gain_rejected(ref):
    with pytest.raises(Unstable):
        lqr.solve_pk(ref, 100 * np.ones((2, 3)))
    assert not lqr.is_stable(ref, 1e8 * np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        lqr.closed_loop(ref, np.zeros((3, 2)))


def test_optimal_gain_is_stable(ref, ref_dare):
    assert lqr.is_stable(ref, ref_dare.K)


def test_lyapunov_matches_scipy_and_batches(rng):
    Fs, Ss = [], []
    for _ in range(6):
        F = rng.standard_normal((4, 4))
        F *= 0.95 / np.linalg.norm(F, 2)
        G = rng.standard_normal((4, 4))
        Fs.append(F)
        Ss.append(G @ G.T + 0.1 * np.eye(4))
    X = lqr.lyapunov(np.array(Fs), np.array(Ss))
    for F, S, Xi in zip(Fs, Ss, X):
        assert np.allclose(Xi, sla.solve_discrete_lyapunov(F, S), rtol=1e-10, atol=1e-12)
        assert lqr.lyapunov_residual(F, S, Xi) <= 1e-10 * max(1.0, np.linalg.norm(Xi))
        assert np.array_equal(Xi, Xi.T)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4))
def test_random_instance_solvers(seed, d1, d2):
    rng = np.random.default_rng(seed)
    inst = lqr.random_instance(rng, d1, d2)
    sol = lqr.solve_dare(inst)
    assert sol.residual <= 1e-10
    assert np.abs(sol.P - sol.P.T).max() <= 1e-10
    K = lqr.random_stable_gain(inst, rng)
    PK = lqr.solve_pk(inst, K)
    F = lqr.closed_loop(inst, K)
    assert lqr.lyapunov_residual(F.T, inst.Q + K.T @ inst.R @ K, PK) <= 1e-10 * max(1, np.linalg.norm(PK))
    assert lqr.cost_J(inst, K) >= sol.J - 1e-10


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    inst = lqr.random_instance(rng, 3, 2)
    K = lqr.random_stable_gain(inst, rng)
    h = 1e-5
    fd = np.zeros_like(K)
    for idx in np.ndindex(*K.shape):
        E = np.zeros_like(K)
        E[idx] = h
        fd[idx] = (lqr.cost_J(inst, K + E) - lqr.cost_J(inst, K - E)) / (2 * h)
    g = lqr.gradient_J(inst, K)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


def test_pl_inequality_examples(ref, ref_dare):
    lhs, rhs, ok = lqr.pl_inequality_check(ref, ref_dare.K, ref_dare)
    assert abs(lhs) < 1e-12 and abs(rhs) < 1e-12 and ok


def test_pl_inequality_scalar_closed_form():
    inst = scalar()
    sol = lqr.solve_dare(inst)
    P = sol.P[0, 0]
    lhs, rhs, ok = lqr.pl_inequality_check(inst, np.zeros((1, 1)), sol)
    # K = 0: P_K = Sigma_K = 4/3, grad J = -2 b P_K a Sigma_K = -16/9
    assert lhs == pytest.approx(4 / 3 - P, abs=1e-12)
    sigma_star = 1 / (1 - (0.5 - sol.K[0, 0]) ** 2)
    assert rhs == pytest.approx(sigma_star / (16 / 9) * (16 / 9) ** 2, rel=1e-10)
    assert ok


@given(st.integers(0, 10_000))
def test_structural_bounds_at_random_gains(seed):
    rng = np.random.default_rng(seed)
    inst = lqr.reference_instance()
    K = lqr.random_stable_gain(inst, rng)
    assert lqr.pl_inequality_check(inst, K)[2]
    assert lqr.sigma_bounds_check(inst, K)[3]


def test_instance_validation():
    with pytest.raises(ValueError):
        scalar(q=-1.0)
    with pytest.raises(NotSymmetric):
        LqrInstance(A=np.eye(2), B=np.ones((2, 1)), Q=[[1, 0.5], [0, 1]], R=[[1]], Psi=np.eye(2))
    with pytest.raises(DimensionMismatch):
        LqrInstance(A=np.eye(3), B=np.ones((2, 1)), Q=np.eye(2), R=[[1]], Psi=np.eye(2))
    inst = scalar(sigma=0.2)
    assert LqrInstance.from_dict(inst.to_dict()) == inst or \
        np.array_equal(LqrInstance.from_dict(inst.to_dict()).A, inst.A)


# --- features ------------------------------------------------------------------

def test_svec_examples():
    assert np.allclose(lqr.phi([1.0], [2.0]), [1.0, 2 * math.sqrt(2), 4.0])
    assert np.array_equal(lqr.phi([0.0], [0.0]), np.zeros(3))
    with pytest.raises(NotSymmetric):
        lqr.svec([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(DimensionMismatch):
        lqr.smat(np.ones(4))


sym = st.integers(1, 6).flatmap(lambda n: arrays(float, (n, n), elements=st.floats(-100, 100)))


@given(sym, st.data())
def test_svec_isometry_and_roundtrip(M, data):
    M = M + M.T
    N = data.draw(arrays(float, M.shape, elements=st.floats(-100, 100)))
    N = N + N.T
    assert lqr.svec(M) @ lqr.svec(N) == pytest.approx(np.trace(M @ N), abs=1e-10 * (1 + np.abs(M).max() * np.abs(N).max() * M.size))
    assert np.allclose(lqr.smat(lqr.svec(M)), M, rtol=1e-15, atol=0.0)


# --- critic and actor ----------------------------------------------------------

@pytest.mark.parametrize("form", ["bellman", "simplified"])
def test_critic_zero_step(form, ref):
    st0 = CriticState(0.3, np.eye(5))
    assert lqr.critic_step(st0, (np.ones(3), np.ones(2), np.zeros(3), np.zeros(2)), ref, 0.0, form) is st0


@pytest.mark.parametrize("form", ["bellman", "simplified"])
def test_critic_hand_fixture(form):
    inst = scalar()
    out = lqr.critic_step(CriticState(0.0, np.zeros((2, 2))), ([1.0], [0.0], [0.5], [0.0]),
                          inst, 0.1, form)
    # cost 1, z = (1, 0): J' = 0 - 0.1 (0 - 1), Omega' = 0 - 0.1 z z' (0 + 0 - 1)
    assert out.J_hat == pytest.approx(0.1, abs=1e-15)
    assert np.allclose(out.Omega_hat, [[0.1, 0.0], [0.0, 0.0]], atol=1e-15)


def test_bellman_matrix_form_equals_svec_form(rng, ref):
    st0 = CriticState(0.7, np.cov(rng.standard_normal((5, 20))))
    x, u, x2, u2 = rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(2)
    out = lqr.critic_step(st0, (x, u, x2, u2), ref, 0.05, "bellman")
    z, z2 = np.concatenate([x, u]), np.concatenate([x2, u2])
    Om = st0.Omega_hat
    cost = x @ x + u @ u
    td = z @ Om @ z - z2 @ Om @ z2 + st0.J_hat - cost
    assert np.allclose(out.Omega_hat, Om - 0.05 * td * np.outer(z, z), atol=1e-12)
    assert out.J_hat == pytest.approx(st0.J_hat - 0.05 * (st0.J_hat - cost))
    assert np.array_equal(out.Omega_hat, out.Omega_hat.T)


def test_bellman_fixed_point_monte_carlo(ref):
    """Mean critic displacement at the exact critic is zero within Monte-Carlo error."""
    rng = np.random.default_rng(7)
    inst = ref
    K = lqr.random_stable_gain(inst, rng)
    w = np.concatenate([[lqr.cost_J(inst, K)], lqr.svec(lqr.omega_K(inst, K))])
    n, d1 = 100_000, inst.d1
    L = np.linalg.cholesky(inst.Psi)
    x = np.zeros(d1)
    for _ in range(200):
        x = (inst.A - inst.B @ K) @ x + L @ rng.standard_normal(d1) + inst.sigma * inst.B @ rng.standard_normal(inst.d2)
    Zx = rng.standard_normal((n + 1, d1))
    Zu = rng.standard_normal((n + 1, inst.d2))
    xs = np.empty((n + 1, d1))
    us = np.empty((n + 1, inst.d2))
    u = -K @ x + inst.sigma * Zu[0]
    for t in range(n + 1):
        xs[t], us[t] = x, u
        x = inst.A @ x + inst.B @ u + L @ Zx[t]
        u = -K @ x + inst.sigma * Zu[(t + 1) % (n + 1)]
    Z = np.hstack([xs, us])
    iu, wt = np.triu_indices(5), None
    F = np.einsum("ni,nj->nij", Z, Z)[:, iu[0], iu[1]] * np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    f, f2 = F[:-1], F[1:]
    cost = np.einsum("ni,ij,nj->n", xs[:-1], inst.Q, xs[:-1]) + np.einsum("ni,ij,nj->n", us[:-1], inst.R, us[:-1])
    J, psi = w[0], w[1:]
    disp = np.hstack([(J - cost)[:, None], f * (J + (f - f2) @ psi - cost)[:, None]])
    mean = disp.mean(axis=0)
    # successive samples are correlated; inflate the i.i.d. error bar generously
    se = disp.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(mean) <= 6 * se + 1e-12)


def test_actor_examples(ref, ref_dare, rng):
    K = np.eye(2)
    assert np.allclose(lqr.actor_step(K, CriticState(0.0, np.eye(4)), 0.1), 0.9 * np.eye(2))
    K = lqr.random_stable_gain(ref, rng)
    crit = CriticState(lqr.cost_J(ref, K), lqr.omega_K(ref, K))
    step = lqr.actor_step(K, crit, 0.01) - K
    assert np.allclose(step, -0.01 * lqr.natural_gradient_E(ref, K) / 2, atol=1e-14)
    assert np.array_equal(lqr.actor_step(K, crit, 0.0), K)


# --- online loop ---------------------------------------------------------------

def test_empty_run(ref):
    assert lqr.run_lqr_ac(ref, StepSchedule(), 0, seed=0) == []


def test_run_is_deterministic(ref, ref_dare):
    a = lqr.run_lqr_ac(ref, StepSchedule(), 200, seed=4, dare=ref_dare)
    b = lqr.run_lqr_ac(ref, StepSchedule(), 200, seed=4, dare=ref_dare)
    assert a == b and len(a) == 200


def test_backends_agree(ref, ref_dare):
    a = lqr.run_lqr_ac(ref, StepSchedule(), 300, seed=2, dare=ref_dare, backend="numba", full=True)
    b = lqr.run_lqr_ac(ref, StepSchedule(), 300, seed=2, dare=ref_dare, backend="numpy", full=True)
    assert np.allclose(a.gains, b.gains, rtol=1e-10, atol=1e-13)
    ga = np.array([r.metric for r in a.records])
    gb = np.array([r.metric for r in b.records])
    assert np.allclose(ga, gb, rtol=1e-9)


def test_gap_is_cost_of_logged_gain(ref, ref_dare):
    run = lqr.run_lqr_ac(ref, StepSchedule(), 20, seed=1, dare=ref_dare, full=True, eval_stride=5)
    for rec, K in zip(run.records, run.gains):
        if rec.k % 5 == 0:
            assert rec.metric == pytest.approx(lqr.cost_J(ref, K) - ref_dare.J, rel=1e-10)
        else:
            assert rec.metric is None


def test_simplified_form_runs(ref, ref_dare):
    recs = lqr.run_lqr_ac(ref, StepSchedule(), 50, seed=0, dare=ref_dare, form="simplified")
    assert len(recs) == 50


def test_unstable_gain_aborts(ref, ref_dare):
    big = StepSchedule(alpha0=30.0, beta0=30.0, a=0.5, b=0.5)
    with pytest.raises(Aborted) as info:
        lqr.run_lqr_ac(ref, big, 200, seed=0, dare=ref_dare)
    k = info.value.k
    assert len(info.value.records) == k and all(r.stable for r in info.value.records)


def test_initial_gain_validated(ref):
    with pytest.raises(Unstable):
        lqr.run_lqr_ac(ref, StepSchedule(), 10, seed=0, init_K=50 * np.ones((2, 3)))


def test_random_stable_gain_is_stable(ref, rng):
    for _ in range(20):
        assert lqr.is_stable(ref, lqr.random_stable_gain(ref, rng))
