"""Controlled Markov kernels and finite-chain mixing diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NoConvergence, Unsupported

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class ControlledKernel:
    """Transition law ``P(. | X, theta)``.

    ``sampler(x, theta, rng)`` draws the next sample. ``finite_matrix(theta)``
    returns the dense row-stochastic matrix when the state space is finite;
    continuous kernels leave it ``None`` and the TV/mixing tools refuse them.
    """

    sampler: Callable[[Any, np.ndarray, np.random.Generator], Any]
    finite_matrix: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def sample(self, x, theta, rng):
        return self.sampler(x, theta, rng)

    def matrix(self, theta) -> np.ndarray:
        if self.finite_matrix is None:
            raise Unsupported("kernel has no finite transition matrix")
        P = np.asarray(self.finite_matrix(theta), dtype=float)
        check_stochastic(P)
        return P


def check_stochastic(P: np.ndarray, tol: float = STOCHASTIC_TOL) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionMismatch(f"transition matrix must be square, got {P.shape}")
    if np.any(P < 0):
        raise ValueError("transition matrix has negative entries")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > tol:
        raise ValueError("transition matrix rows do not sum to 1")


def finite_kernel(P: np.ndarray) -> ControlledKernel:
    """A kernel that ignores theta, backed by a fixed stochastic matrix."""
    P = np.asarray(P, dtype=float)
    check_stochastic(P)
    cdf = np.cumsum(P, axis=1)

    def sampler(x, theta, rng):
        return int(min(np.searchsorted(cdf[x], rng.random(), side="right"), len(P) - 1))

    return ControlledKernel(sampler=sampler, finite_matrix=lambda theta: P)


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"support sizes differ: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def _max_row_tv(M: np.ndarray, mu: np.ndarray) -> float:
    return 0.5 * float(np.abs(M - mu[None, :]).sum(axis=1).max())


def stationary_distribution(P, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary law of an ergodic chain by power iteration from every start state.

    Running the iteration on the full matrix of point masses, not just a
    uniform start, is what exposes reducible and periodic chains: their rows
    never agree.
    """
    P = np.asarray(P, dtype=float)
    check_stochastic(P)
    n = P.shape[0]
    M = np.eye(n)
    M_prev = None
    for _ in range(max_iter):
        M_next = M @ P
        spread = np.abs(M_next - M_next.mean(axis=0)).sum(axis=1).max()
        if spread <= tol:
            # keep iterating while it still helps, so mu is good to rounding
            # level and tail TV profiles are not floored at tol
            for _ in range(max_iter):
                M_more = M_next @ P
                more = np.abs(M_more - M_more.mean(axis=0)).sum(axis=1).max()
                if more >= spread or more <= 1e-15:
                    if more < spread:
                        M_next = M_more
                    break
                M_next, spread = M_more, more
            mu = M_next.mean(axis=0)
            mu /= mu.sum()
            if np.abs(mu @ P - mu).sum() <= tol:
                return mu
        elif np.abs(M_next - M).max() == 0.0:
            # frozen rows that still disagree: several closed classes
            raise NoConvergence("chain is reducible: no unique stationary law")
        elif M_prev is not None and np.abs(M_next - M_prev).max() == 0.0:
            raise NoConvergence("chain is periodic: rows cycle without converging")
        M_prev, M = M, M_next
    raise NoConvergence(f"power iteration did not converge in {max_iter} steps")


def empirical_mixing_time(kernel: ControlledKernel, theta, alpha: float,
                          cap: int = 100_000) -> int:
    """Smallest ``k`` with ``max_x TV(P^k(x, .), mu) <= alpha``; ``k = 0`` is the raw start."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    P = kernel.matrix(theta)
    mu = stationary_distribution(P)
    M = np.eye(P.shape[0])
    for k in range(cap + 1):
        if _max_row_tv(M, mu) <= alpha:
            return k
        M = M @ P
    raise NoConvergence(f"not mixed to {alpha} within {cap} steps")


def tv_profile(P, k_max: int) -> np.ndarray:
    """``max_x TV(P^k(x, .), mu)`` for ``k = 0 .. k_max``."""
    P = np.asarray(P, dtype=float)
    mu = stationary_distribution(P)
    M = np.eye(P.shape[0])
    out = np.empty(k_max + 1)
    for k in range(k_max + 1):
        out[k] = _max_row_tv(M, mu)
        M = M @ P
    return out


def geometric_ergodicity_check(kernel: ControlledKernel, thetas: Sequence,
                               m: float, rho: float, k_max: int) -> bool:
    ks = np.arange(k_max + 1)
    envelope = m * rho ** ks
    for theta in thetas:
        profile = tv_profile(kernel.matrix(theta), k_max)
        if np.any(profile > envelope + 1e-15):
            return False
    return True


def kernel_tv_lipschitz(kernel: ControlledKernel, theta_a, theta_b) -> float:
    """Ratio ``max-row TV(P_a, P_b) / ||theta_a - theta_b||`` used by the regularity probe."""
    Pa = kernel.matrix(theta_a)
    Pb = kernel.matrix(theta_b)
    dist = float(np.linalg.norm(np.asarray(theta_a, float) - np.asarray(theta_b, float)))
    if dist == 0.0:
        return 0.0
    return 0.5 * float(np.abs(Pa - Pb).sum(axis=1).max()) / dist
