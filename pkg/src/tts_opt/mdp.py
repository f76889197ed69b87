"""Tabular average-reward MDP with a softmax actor and a linear TD(0) critic.

The sample is the transition ``X = (s, a, s')``. With
``delta = r(s, a) - J_hat + phi(s')'psi - phi(s)'psi``:

    H(theta, omega, X) = -delta * grad log pi_theta(a | s)          (descent on -J)
    G(theta, omega, X) = (J_hat - r(s, a),  -delta * phi(s))

so ``omega <- omega - beta G`` is textbook average-reward TD(0). The next
transition draws ``a' ~ pi_theta(. | s')`` under the *updated* policy and
``s'' ~ P(. | s', a')``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import GroundTruth, Observation, OptState, TwoTimescaleProblem
from .errors import DimensionMismatch, SingularSystem
from .markov import ControlledKernel


@dataclass(frozen=True)
class TabularMdp:
    P: np.ndarray          # (S, A, S)
    R: np.ndarray          # (S, A), entries in [-1, 1]
    features: np.ndarray   # (S, m), full column rank

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        R = np.array(self.R, dtype=float)
        F = np.array(self.features, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionMismatch(f"P must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise DimensionMismatch(f"R must have shape {P.shape[:2]}, got {R.shape}")
        if F.ndim != 2 or F.shape[0] != P.shape[0]:
            raise DimensionMismatch("features must have one row per state")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("each P(s, a, .) must be a probability vector")
        if np.any(np.abs(R) > 1.0):
            raise ValueError("rewards must lie in [-1, 1]")
        if np.linalg.matrix_rank(F) < F.shape[1]:
            raise ValueError("feature matrix must have full column rank")
        for name, arr in (("P", P), ("R", R), ("features", F)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMdp":
        return cls(P=d["P"], R=d["R"], features=d["features"])

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(), "R": self.R.tolist(), "features": self.features.tolist()}


def _logits(mdp: TabularMdp, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.size != mdp.n_states * mdp.n_actions:
        raise DimensionMismatch("theta must have n_states * n_actions entries")
    return theta.reshape(mdp.n_states, mdp.n_actions)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def policy(theta, s: int, n_actions: int | None = None) -> np.ndarray:
    """Action distribution at state ``s`` for flat tabular logits ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if n_actions is None:
        row = theta
    else:
        row = theta.reshape(-1, n_actions)[s]
    return softmax(row)


def policy_table(mdp: TabularMdp, theta) -> np.ndarray:
    return softmax(_logits(mdp, theta))


def grad_log_pi(mdp: TabularMdp, theta, s: int, a: int) -> np.ndarray:
    pi = policy_table(mdp, theta)
    g = np.zeros((mdp.n_states, mdp.n_actions))
    g[s] = -pi[s]
    g[s, a] += 1.0
    return g.reshape(-1)


def induced_chain(mdp: TabularMdp, theta) -> np.ndarray:
    pi = policy_table(mdp, theta)
    return np.einsum("sa,sat->st", pi, mdp.P)


def exact_stationary(mdp: TabularMdp, theta) -> np.ndarray:
    """Stationary state law by a direct linear solve (exact up to rounding)."""
    Pt = induced_chain(mdp, theta)
    n = mdp.n_states
    Msys = np.vstack([Pt.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu, _, rank, _ = np.linalg.lstsq(Msys, rhs, rcond=None)
    if rank < n:
        raise SingularSystem("induced chain has no unique stationary law")
    return mu


def exact_avg_reward(mdp: TabularMdp, theta) -> float:
    mu = exact_stationary(mdp, theta)
    pi = policy_table(mdp, theta)
    return float(mu @ np.sum(pi * mdp.R, axis=1))


def exact_diff_value(mdp: TabularMdp, theta) -> np.ndarray:
    """Differential value ``V`` with ``(I - P_theta) V = r_pi - J`` and ``mu' V = 0``."""
    mu = exact_stationary(mdp, theta)
    pi = policy_table(mdp, theta)
    Pt = induced_chain(mdp, theta)
    r_pi = np.sum(pi * mdp.R, axis=1)
    J = float(mu @ r_pi)
    n = mdp.n_states
    Msys = np.vstack([np.eye(n) - Pt, mu[None, :]])
    rhs = np.concatenate([r_pi - J, [0.0]])
    V, _, rank, _ = np.linalg.lstsq(Msys, rhs, rcond=None)
    if rank < n:
        raise SingularSystem("average-reward Bellman system is singular")
    return V


def exact_q(mdp: TabularMdp, theta) -> np.ndarray:
    J = exact_avg_reward(mdp, theta)
    V = exact_diff_value(mdp, theta)
    return mdp.R - J + mdp.P @ V


def exact_policy_gradient(mdp: TabularMdp, theta) -> np.ndarray:
    """``sum_s mu(s) sum_a pi(a|s) grad log pi(a|s) Q(s, a)`` for tabular softmax."""
    mu = exact_stationary(mdp, theta)
    pi = policy_table(mdp, theta)
    Qsa = exact_q(mdp, theta)
    # for tabular softmax the (s, b) entry of the sum over a is pi(b|s) (Q(s,b) - E_pi Q(s,.))
    adv = Qsa - np.sum(pi * Qsa, axis=1, keepdims=True)
    return (mu[:, None] * pi * adv).reshape(-1)


def transition_law(mdp: TabularMdp, theta) -> np.ndarray:
    """Stationary probability of each transition ``(s, a, s')``."""
    mu = exact_stationary(mdp, theta)
    pi = policy_table(mdp, theta)
    return mu[:, None, None] * pi[:, :, None] * mdp.P


# --- oracles ----------------------------------------------------------------


def _td_error(mdp, omega, X):
    s, a, s2 = X
    J_hat, psi = omega[0], omega[1:]
    F = mdp.features
    return mdp.R[s, a] - J_hat + F[s2] @ psi - F[s] @ psi


def H_oracle(mdp: TabularMdp, theta, omega, X) -> np.ndarray:
    s, a, _ = X
    return -_td_error(mdp, omega, X) * grad_log_pi(mdp, theta, s, a)


def G_oracle(mdp: TabularMdp, theta, omega, X) -> np.ndarray:
    s, a, _ = X
    delta = _td_error(mdp, omega, X)
    return np.concatenate([[omega[0] - mdp.R[s, a]], -delta * mdp.features[s]])


def _enumerate(mdp, theta, fn):
    law = transition_law(mdp, theta)
    acc = None
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for s2 in range(mdp.n_states):
                w = law[s, a, s2]
                if w == 0.0:
                    continue
                v = w * fn((s, a, s2))
                acc = v if acc is None else acc + v
    return acc


def expected_H(mdp: TabularMdp, theta, omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    return _enumerate(mdp, theta, lambda X: H_oracle(mdp, theta, omega, X))


def expected_G(mdp: TabularMdp, theta, omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    return _enumerate(mdp, theta, lambda X: G_oracle(mdp, theta, omega, X))


def critic_root(mdp: TabularMdp, theta) -> np.ndarray:
    """A root ``(J, psi)`` of the expected fast operator.

    With tabular features the psi-block is singular along the constant
    direction; the minimum-norm least-squares root is returned, whose
    values ``phi(s)'psi`` equal ``V(s)`` up to a common shift.
    """
    law = transition_law(mdp, theta)
    F = mdp.features
    J = exact_avg_reward(mdp, theta)
    Amat = np.einsum("sat,si,sj->ij", law, F, F) - np.einsum("sat,si,tj->ij", law, F, F)
    bvec = np.einsum("sat,si,sa->i", law, F, mdp.R - J)
    psi = np.linalg.lstsq(Amat, bvec, rcond=None)[0]
    return np.concatenate([[J], psi])


def critic_monotonicity(mdp: TabularMdp, theta) -> float:
    """Smallest eigenvalue of the symmetric part of ``E[phi(s)(phi(s) - phi(s'))']``."""
    law = transition_law(mdp, theta)
    F = mdp.features
    Amat = np.einsum("sat,si,sj->ij", law, F, F) - np.einsum("sat,si,tj->ij", law, F, F)
    return float(np.linalg.eigvalsh(0.5 * (Amat + Amat.T))[0])


def make_ac_problem(mdp: TabularMdp) -> TwoTimescaleProblem:
    cdf_P = np.cumsum(mdp.P, axis=2)

    def sampler(X, theta, rng):
        _, _, s2 = X
        pi = policy(theta, s2, mdp.n_actions)
        a2 = int(min(np.searchsorted(np.cumsum(pi), rng.random(), side="right"), mdp.n_actions - 1))
        s3 = int(min(np.searchsorted(cdf_P[s2, a2], rng.random(), side="right"), mdp.n_states - 1))
        return (s2, a2, s3)

    truth = GroundTruth(
        omega_star=lambda th: critic_root(mdp, th),
        f=lambda th: -exact_avg_reward(mdp, th),
        grad_f=lambda th: -exact_policy_gradient(mdp, th),
    )
    return TwoTimescaleProblem(
        H=lambda th, om, X: H_oracle(mdp, th, om, X),
        G=lambda th, om, X: G_oracle(mdp, th, om, X),
        kernel=ControlledKernel(sampler=sampler),
        truth=truth, name="mdp-actor-critic", meta={"mdp": mdp},
    )


def initial_state(mdp: TabularMdp, theta0=None, rng=None) -> OptState:
    """Start at logits ``theta0`` (default 0) with a zero critic and a sampled first transition."""
    rng = np.random.default_rng(0) if rng is None else rng
    theta0 = np.zeros(mdp.n_states * mdp.n_actions) if theta0 is None else np.asarray(theta0, float)
    s = 0
    pi = policy(theta0, s, mdp.n_actions)
    a = int(min(np.searchsorted(np.cumsum(pi), rng.random(), side="right"), mdp.n_actions - 1))
    s2 = int(min(np.searchsorted(np.cumsum(mdp.P[s, a]), rng.random(), side="right"), mdp.n_states - 1))
    return OptState(theta0, np.zeros(1 + mdp.n_features), (s, a, s2), 0)


def gradient_monitor(mdp: TabularMdp):
    """Metric: squared norm of the exact policy gradient at the current logits."""
    def mon(state: OptState, evaluate: bool = True) -> Observation:
        if not evaluate:
            return Observation()
        g = exact_policy_gradient(mdp, state.theta)
        return Observation(float(g @ g), None, True)
    return mon
