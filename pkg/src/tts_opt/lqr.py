"""Average-cost LQR: exact solvers and the online natural actor-critic.

Conventions
-----------
Control is ``u = -K x`` and the optimal gain is
``K* = (B' P B + R)^{-1} B' P A`` with a plus sign, which makes the natural
gradient ``E_K = 2 (R + B' P_K B) K - 2 B' P_K A`` vanish at ``K*``.
The cost includes the exploration term:
``J(K) = tr(P_K Psi_sigma) + sigma^2 tr(R)`` with ``Psi_sigma = Psi + sigma^2 B B'``.
The constant shifts ``J`` and ``J*`` equally, so ``J(K) - J*`` is unaffected.

The actor moves along ``Omega22 K - Omega21``, which equals ``E_K / 2`` at the
exact critic; the factor two is absorbed into the actor step size.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .errors import (Aborted, DimensionMismatch, NoConvergence, NonFinite, NotStabilizable,
                     NotSymmetric, Unstable)
from .engine import RunRecord
from .schedules import StepSchedule

SPD_TOL = 1e-10


def _check_spd(name, M, tol=SPD_TOL):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > tol:
        raise NotSymmetric(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(0.5 * (M + M.T))[0] <= 0:
        raise ValueError(f"{name} is not positive definite")


@dataclass(frozen=True)
class LqrInstance:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Psi: np.ndarray
    sigma: float = 0.1
    rho: float = 0.99

    def __post_init__(self):
        for name in ("A", "B", "Q", "R", "Psi"):
            arr = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "rho", float(self.rho))
        d1, d2 = self.B.shape
        if self.A.shape != (d1, d1):
            raise DimensionMismatch(f"A must be {d1}x{d1}, got {self.A.shape}")
        if self.Q.shape != (d1, d1) or self.Psi.shape != (d1, d1):
            raise DimensionMismatch("Q and Psi must match the state dimension")
        if self.R.shape != (d2, d2):
            raise DimensionMismatch("R must match the control dimension")
        _check_spd("Q", self.Q)
        _check_spd("R", self.R)
        _check_spd("Psi", self.Psi)
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")

    @property
    def d1(self) -> int:
        return self.B.shape[0]

    @property
    def d2(self) -> int:
        return self.B.shape[1]

    @property
    def Psi_sigma(self) -> np.ndarray:
        return self.Psi + self.sigma ** 2 * self.B @ self.B.T

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "Q": self.Q.tolist(),
                "R": self.R.tolist(), "Psi": self.Psi.tolist(),
                "sigma": self.sigma, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "LqrInstance":
        d = dict(d)
        d.pop("dims", None)
        return cls(**d)


def reference_instance(sigma: Optional[float] = None, rho: Optional[float] = None,
                   psi_scale: Optional[float] = None) -> LqrInstance:
    """The bundled 3-state, 2-input benchmark system.

    The bundled noise covariance is ``0.5 I``: with ``Psi = I`` the online
    critic diverges on some seeds under the benchmark step sizes.
    ``psi_scale`` replaces it by ``psi_scale * I``.
    """
    d = json.loads(resources.files("tts_opt.data").joinpath("lqr_reference.json").read_text())
    inst = dict(d["problem"]["instance"])
    if sigma is not None:
        inst["sigma"] = sigma
    if rho is not None:
        inst["rho"] = rho
    if psi_scale is not None:
        inst["Psi"] = (psi_scale * np.eye(3)).tolist()
    return LqrInstance.from_dict(inst)


# --------------------------------------------------------------------------
# linear-algebra kernels


def lyapunov(F: np.ndarray, S: np.ndarray, max_doublings: int = 64) -> np.ndarray:
    """Solve ``X = F X F' + S`` by the doubling recursion (``F`` a contraction).

    Works on stacks: ``F`` and ``S`` may carry a leading batch axis.
    """
    X = np.array(S, dtype=float)
    Fk = np.array(F, dtype=float)
    for _ in range(max_doublings):
        X = X + Fk @ X @ np.swapaxes(Fk, -1, -2)
        Fk = Fk @ Fk
        if np.max(np.abs(Fk), initial=0.0) < 1e-20:
            break
    else:
        if not np.all(np.isfinite(X)) or np.max(np.abs(Fk)) > 1e-12:
            raise NoConvergence("Lyapunov doubling did not converge")
    X = 0.5 * (X + np.swapaxes(X, -1, -2))
    # one fixed-point sweep polishes the last bits of residual
    X = F @ X @ np.swapaxes(F, -1, -2) + S
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def lyapunov_residual(F, S, X) -> float:
    return float(np.linalg.norm(X - F @ X @ F.T - S))


def closed_loop(inst: LqrInstance, K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.shape != (inst.d2, inst.d1):
        raise DimensionMismatch(f"K must be {inst.d2}x{inst.d1}, got {K.shape}")
    return inst.A - inst.B @ K


def is_stable(inst: LqrInstance, K) -> bool:
    """``||A - B K||_2 < rho`` (largest singular value)."""
    Acl = closed_loop(inst, K)
    if not np.all(np.isfinite(Acl)):
        return False
    return bool(np.linalg.norm(Acl, 2) < inst.rho)


def _require_contraction(inst, K):
    Acl = closed_loop(inst, K)
    if not np.all(np.isfinite(Acl)) or np.linalg.norm(Acl, 2) >= 1.0:
        raise Unstable("||A - B K||_2 >= 1")
    return Acl


def solve_pk(inst: LqrInstance, K) -> np.ndarray:
    """``P_K = Q + K'RK + (A-BK)' P_K (A-BK)``."""
    K = np.asarray(K, dtype=float)
    Acl = _require_contraction(inst, K)
    return lyapunov(Acl.T, inst.Q + K.T @ inst.R @ K)


def solve_sigma(inst: LqrInstance, K) -> np.ndarray:
    """Stationary state covariance ``Sigma_K = Psi_sigma + (A-BK) Sigma_K (A-BK)'``."""
    Acl = _require_contraction(inst, K)
    return lyapunov(Acl, inst.Psi_sigma)


def cost_J(inst: LqrInstance, K) -> float:
    PK = solve_pk(inst, K)
    return float(np.trace(PK @ inst.Psi_sigma) + inst.sigma ** 2 * np.trace(inst.R))


def natural_gradient_E(inst: LqrInstance, K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    PK = solve_pk(inst, K)
    return 2.0 * (inst.R + inst.B.T @ PK @ inst.B) @ K - 2.0 * inst.B.T @ PK @ inst.A


def gradient_J(inst: LqrInstance, K) -> np.ndarray:
    return natural_gradient_E(inst, K) @ solve_sigma(inst, K)


def omega_K(inst: LqrInstance, K) -> np.ndarray:
    """Exact critic matrix: the quadratic form of the state-action cost-to-go."""
    PK = solve_pk(inst, K)
    A, B = inst.A, inst.B
    top = np.hstack([inst.Q + A.T @ PK @ A, A.T @ PK @ B])
    bot = np.hstack([B.T @ PK @ A, inst.R + B.T @ PK @ B])
    Om = np.vstack([top, bot])
    return 0.5 * (Om + Om.T)


@dataclass(frozen=True)
class DareSolution:
    P: np.ndarray
    K: np.ndarray
    J: float
    residual: float
    iterations: int


def _riccati_map(inst, P):
    A, B = inst.A, inst.B
    BtP = B.T @ P
    gain = np.linalg.solve(inst.R + BtP @ B, BtP @ A)
    P_new = A.T @ P @ A + inst.Q - A.T @ P @ B @ gain
    return 0.5 * (P_new + P_new.T), gain


def solve_dare(inst: LqrInstance, tol: float = 1e-12, accept: float = 1e-10,
               max_iter: int = 1_000_000, patience: int = 2000) -> DareSolution:
    """Riccati fixed point by value iteration from ``P = Q``."""
    P = inst.Q.copy()
    best = math.inf
    since_best = 0
    for it in range(1, max_iter + 1):
        P_new, _ = _riccati_map(inst, P)
        if not np.all(np.isfinite(P_new)) or np.max(np.abs(P_new)) > 1e15:
            raise NotStabilizable("Riccati iteration diverged: (A, B) not stabilizable")
        step = float(np.linalg.norm(P_new - P))
        P = P_new
        if step <= tol:
            break
        if step < best * (1 - 1e-9):
            best, since_best = step, 0
        else:
            since_best += 1
            if since_best > patience:
                if step <= accept:
                    break
                raise NotStabilizable(f"Riccati residual plateaued at {step:.3e}")
    else:
        raise NoConvergence(f"Riccati iteration did not converge in {max_iter} steps")
    P_next, K = _riccati_map(inst, P)
    residual = float(np.linalg.norm(P_next - P))
    if residual > accept:
        raise NoConvergence(f"Riccati residual {residual:.3e} above {accept:.0e}")
    return DareSolution(P=P, K=K, J=cost_J(inst, K), residual=residual, iterations=it)


def riccati_residual(inst: LqrInstance, P) -> float:
    P_next, _ = _riccati_map(inst, np.asarray(P, dtype=float))
    return float(np.linalg.norm(P_next - P))


def pl_inequality_check(inst: LqrInstance, K, dare: Optional[DareSolution] = None):
    """Return ``(lhs, rhs, holds)`` for the gradient-domination inequality.

    ``lhs = J(K) - J*``; ``rhs = ||Sigma_K*||_2 / (s_min(Sigma_K)^2 s_min(R)) * ||grad J||_F^2``.
    """
    dare = solve_dare(inst) if dare is None else dare
    lhs = cost_J(inst, K) - dare.J
    S_K = solve_sigma(inst, K)
    S_star = solve_sigma(inst, dare.K)
    g = gradient_J(inst, K)
    s_min = np.linalg.svd(S_K, compute_uv=False)[-1]
    r_min = np.linalg.svd(inst.R, compute_uv=False)[-1]
    rhs = np.linalg.norm(S_star, 2) / (s_min ** 2 * r_min) * float(np.sum(g * g))
    return float(lhs), float(rhs), bool(lhs <= rhs + 1e-9)


def sigma_bounds_check(inst: LqrInstance, K, tol: float = 1e-9):
    """Eigenvalues of ``Sigma_K`` against ``[l_min(Psi_sigma), l_max(Psi_sigma)/(1-rho^2)]``."""
    eig = np.linalg.eigvalsh(solve_sigma(inst, K))
    ps = np.linalg.eigvalsh(inst.Psi_sigma)
    lo, hi = ps[0], ps[-1] / (1.0 - inst.rho ** 2)
    holds = bool(eig[0] >= lo - tol and eig[-1] <= hi + tol)
    return eig, float(lo), float(hi), holds


# --------------------------------------------------------------------------
# features


def _svec_index(n):
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    return iu, w


def svec(M) -> np.ndarray:
    """Row-major upper triangle with off-diagonal entries scaled by sqrt(2)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch("svec needs a square matrix")
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-9:
        raise NotSymmetric("svec needs a symmetric matrix")
    iu, w = _svec_index(M.shape[0])
    return M[iu] * w


def smat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise DimensionMismatch(f"length {v.size} is not triangular")
    iu, w = _svec_index(n)
    U = np.zeros((n, n))
    U[iu] = v / w
    # mirror the strict upper triangle; copying keeps smat(svec(M)) == M bit for bit
    il = (iu[1], iu[0])
    U[il] = U[iu]
    return U


def phi(x, u) -> np.ndarray:
    z = np.concatenate([np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(u, float))])
    return svec(np.outer(z, z))


def phi_checked(inst: LqrInstance, x, u) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, float))
    u = np.atleast_1d(np.asarray(u, float))
    if x.shape != (inst.d1,) or u.shape != (inst.d2,):
        raise DimensionMismatch("state/control dimensions do not match the instance")
    return phi(x, u)


# --------------------------------------------------------------------------
# actor-critic


class CriticForm(str, enum.Enum):
    BELLMAN = "bellman"
    SIMPLIFIED = "simplified"


@dataclass(frozen=True)
class CriticState:
    J_hat: float
    Omega_hat: np.ndarray

    def __post_init__(self):
        Om = np.array(self.Omega_hat, dtype=float)
        Om = 0.5 * (Om + Om.T)
        Om.flags.writeable = False
        object.__setattr__(self, "Omega_hat", Om)
        object.__setattr__(self, "J_hat", float(self.J_hat))

    def blocks(self, d1: int):
        Om = self.Omega_hat
        return Om[:d1, :d1], Om[:d1, d1:], Om[d1:, :d1], Om[d1:, d1:]

    @property
    def omega(self) -> np.ndarray:
        return np.concatenate([[self.J_hat], svec(self.Omega_hat)])


def bellman_system(inst: LqrInstance, x, u, x2, u2):
    """Sample matrix ``M`` and vector ``c`` of the critic's linear system."""
    f = phi(x, u)
    f2 = phi(x2, u2)
    cost = float(x @ inst.Q @ x + u @ inst.R @ u)
    n = f.size
    M = np.zeros((n + 1, n + 1))
    M[0, 0] = 1.0
    M[1:, 0] = f
    M[1:, 1:] = np.outer(f, f - f2)
    c = np.concatenate([[cost], cost * f])
    return M, c


def critic_step(state: CriticState, transition, inst: LqrInstance, beta: float,
                form=CriticForm.BELLMAN) -> CriticState:
    x, u, x2, u2 = (np.atleast_1d(np.asarray(t, dtype=float)) for t in transition)
    form = CriticForm(form)
    if beta == 0.0:
        return state
    cost = float(x @ inst.Q @ x + u @ inst.R @ u)
    if form is CriticForm.BELLMAN:
        M, c = bellman_system(inst, x, u, x2, u2)
        w = state.omega
        w_new = w - beta * (M @ w - c)
        J_new, Om_new = w_new[0], smat(w_new[1:])
    else:
        z = np.concatenate([x, u])
        J_new = state.J_hat - beta * (state.J_hat - cost)
        Om_new = state.Omega_hat - beta * np.outer(z, z) * (z @ state.Omega_hat @ z + state.J_hat - cost)
    if not (math.isfinite(J_new) and np.all(np.isfinite(Om_new))):
        raise NonFinite("critic update produced a non-finite value")
    return CriticState(J_new, Om_new)


def actor_step(K, critic: CriticState, alpha: float) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    d1 = K.shape[1]
    _, _, O21, O22 = critic.blocks(d1)
    return K - alpha * (O22 @ K - O21)


def random_stable_gain(inst: LqrInstance, rng: np.random.Generator, scale: float = 0.5,
                       shrink: float = 0.95, max_attempts: int = 10_000) -> np.ndarray:
    """Rejection-sample ``K`` with i.i.d. Gaussian entries, shrinking the scale on each miss."""
    for _ in range(max_attempts):
        K = scale * rng.standard_normal((inst.d2, inst.d1))
        if is_stable(inst, K):
            return K
        scale *= shrink
    raise NoConvergence(f"no stable gain found in {max_attempts} draws")


def random_instance(rng: np.random.Generator, d1: int, d2: int, sigma: float = 0.1,
                    rho: float = 0.99) -> LqrInstance:
    """A random system with ``||A||_2 < rho`` so that ``K = 0`` is stabilising."""
    A = rng.standard_normal((d1, d1))
    A *= rng.uniform(0.2, 0.9) * rho / np.linalg.norm(A, 2)
    B = rng.standard_normal((d1, d2)) / math.sqrt(d1)

    def spd(n):
        G = rng.standard_normal((n, n))
        S = G @ G.T / n + 0.5 * np.eye(n)
        return 0.5 * (S + S.T)

    return LqrInstance(A=A, B=B, Q=spd(d1), R=spd(d2), Psi=spd(d1), sigma=sigma, rho=rho)


# --------------------------------------------------------------------------
# full loop


class Safeguard(str, enum.Enum):
    ABORT = "abort"
    LOG = "log"


@dataclass
class LqrRun:
    records: list
    K: np.ndarray
    critic: CriticState
    gains: np.ndarray


def _initial_state(inst, rng, init_K):
    K0 = random_stable_gain(inst, rng) if init_K is None else np.array(init_K, dtype=float)
    if init_K is not None and not is_stable(inst, K0):
        raise Unstable("supplied initial gain is not stable")
    n = inst.d1 + inst.d2
    J0 = float(rng.random())
    G = rng.standard_normal((n, n))
    Om0 = G @ G.T / n
    x0 = rng.standard_normal(inst.d1)
    u0 = -K0 @ x0 + inst.sigma * rng.standard_normal(inst.d2)
    return K0, CriticState(J0, Om0), x0, u0


def _simulate_numpy(inst, form, K, critic, x, u, alphas, betas, Z):
    n_iters = len(alphas)
    d1 = inst.d1
    L = np.linalg.cholesky(inst.Psi)
    gains = np.empty((n_iters, inst.d2, inst.d1))
    fail = -1
    for k in range(n_iters):
        gains[k] = K
        x2 = inst.A @ x + inst.B @ u + L @ Z[k, :d1]
        u2 = -K @ x2 + inst.sigma * Z[k, d1:]
        K_new = actor_step(K, critic, alphas[k])
        try:
            critic = critic_step(critic, (x, u, x2, u2), inst, betas[k], form)
        except NonFinite:
            fail = k
            break
        if not np.all(np.isfinite(K_new)):
            fail = k
            break
        K, x, u = K_new, x2, u2
    return gains, K, critic, fail


def _simulate_numba(inst, form, K, critic, x, u, alphas, betas, Z):
    from .kernels import lqr as kl

    n_iters = len(alphas)
    gains = np.empty((n_iters, inst.d2, inst.d1))
    Om = np.array(critic.Omega_hat)
    K = np.array(K)
    L = np.linalg.cholesky(inst.Psi)
    Jh = np.array([critic.J_hat])
    fail = kl.simulate(np.ascontiguousarray(inst.A), np.ascontiguousarray(inst.B),
                       np.ascontiguousarray(inst.Q), np.ascontiguousarray(inst.R), L,
                       float(inst.sigma), form is CriticForm.BELLMAN, K, Jh, Om,
                       x.copy(), u.copy(), alphas, betas, Z, gains)
    return gains, K, CriticState(Jh[0], Om), int(fail)


def evaluate_gains(inst: LqrInstance, gains: np.ndarray, J_star: float):
    """Stability flags and ``J(K) - J*`` for a stack of gains (NaN where unstable)."""
    Acl = inst.A[None] - inst.B[None] @ gains
    norms = np.linalg.norm(Acl, 2, axis=(1, 2)) if len(gains) else np.empty(0)
    stable = norms < inst.rho
    gap = np.full(len(gains), np.nan)
    if stable.any():
        Ks = gains[stable]
        S = inst.Q[None] + np.swapaxes(Ks, 1, 2) @ inst.R[None] @ Ks
        PK = lyapunov(np.swapaxes(Acl[stable], 1, 2), S)
        J = np.trace(PK @ inst.Psi_sigma[None], axis1=1, axis2=2) + inst.sigma ** 2 * np.trace(inst.R)
        gap[stable] = J - J_star
    return stable, gap


def run_lqr_ac(inst: LqrInstance, schedule: StepSchedule, n_iters: int, seed: int,
               init_K=None, safeguard=Safeguard.ABORT, eval_stride: int = 1,
               form=CriticForm.BELLMAN, backend: Optional[str] = None,
               dare: Optional[DareSolution] = None, full: bool = False):
    """Online natural actor-critic.

    Record ``k`` logs ``J(K_k) - J*`` for the gain used during step ``k`` and
    the flag ``||A - B K_k||_2 < rho``. With ``safeguard="abort"`` the first
    unstable gain raises ``Aborted`` carrying the records before it.
    """
    from ._backend import backend as active_backend

    if n_iters < 0:
        raise ValueError("n_iters must be nonnegative")
    if eval_stride < 1:
        raise ValueError("eval_stride must be at least 1")
    safeguard = Safeguard(safeguard)
    form = CriticForm(form)
    rng = np.random.default_rng(seed)
    K, critic, x, u = _initial_state(inst, rng, init_K)
    if n_iters == 0:
        out = LqrRun([], K, critic, np.empty((0, inst.d2, inst.d1)))
        return out if full else out.records
    dare = solve_dare(inst) if dare is None else dare
    alphas = schedule.alphas(n_iters)
    betas = schedule.betas(n_iters)
    Z = rng.standard_normal((n_iters, inst.d1 + inst.d2))
    sim = _simulate_numba if (backend or active_backend()) == "numba" else _simulate_numpy
    with np.errstate(over="ignore", invalid="ignore"):
        gains, K, critic, fail = sim(inst, form, K, critic, x, u, alphas, betas, Z)
    n_ok = n_iters if fail < 0 else fail + 1
    gains = gains[:n_ok]
    with np.errstate(over="ignore", invalid="ignore"):
        stable, _ = evaluate_gains(inst, gains, dare.J)
    ks = np.arange(n_ok)
    eval_mask = stable & (ks % eval_stride == 0)
    gap = np.full(n_ok, np.nan)
    if eval_mask.any():
        _, g = evaluate_gains(inst, gains[eval_mask], dare.J)
        gap[eval_mask] = g

    records = [RunRecord(int(k), float(alphas[k]), float(betas[k]),
                         None if math.isnan(gap[k]) else float(gap[k]), None, bool(stable[k]))
               for k in range(n_ok)]
    if safeguard is Safeguard.ABORT and not stable.all():
        k_bad = int(np.argmin(stable))
        raise Aborted(k_bad, records[:k_bad])
    if fail >= 0:
        raise NonFinite(f"actor-critic iterate became non-finite at k={fail}")
    out = LqrRun(records, K, critic, gains)
    return out if full else out.records
