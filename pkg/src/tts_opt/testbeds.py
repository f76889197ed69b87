"""Synthetic two-time-scale problems with known solutions.

Every testbed shares one structure. The sample ``X`` is the state of a
two-state chain whose transition law depends on ``theta[0]``:

    P(0 -> 1) = sigmoid(c * theta[0]),    P(1 -> 0) = q.

The max-row TV distance between ``P_theta`` and ``P_theta'`` is
``|sigmoid(c t) - sigmoid(c t')|``, so the kernel is TV-Lipschitz with
``L = c / 4``.

The Markov noise is the centred indicator ``n(X, theta) = 1{X=0} - mu_theta(0)``,
which has zero mean under the stationary law for every theta. The oracles are

    H(theta, omega, X) = grad f(theta) + s_h n(X, theta) v_h + L_c C phi(omega - W theta)
    G(theta, omega, X) = Gamma (omega - W theta) + s_g n(X, theta) v_g

with ``phi`` either the identity (``coupling="linear"``) or the elementwise
absolute value (``coupling="abs"``). Both vanish at ``omega = W theta``, so
``omega*(theta) = W theta`` and ``E[H(theta, W theta, X)] = grad f(theta)``.

With linear coupling the zero-mean critic noise averages out of the
decision update and the decision error is driven down to the order of
``alpha_k``. The ``abs`` coupling turns the critic tracking error into a
bias, which is the situation the theory's rates describe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import GroundTruth, Observation, OptState, TwoTimescaleProblem
from .errors import ConstructionFailure
from .markov import ControlledKernel
from .schedules import Regime

REGIME_CODES = {Regime.STRONGLY_CONVEX: 0, Regime.CONVEX: 1, Regime.PL: 2, Regime.NONCONVEX: 3}
METRIC_NAMES = {0: "dist2", 1: "gap", 2: "gap", 3: "grad2"}


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class TestbedSpec:
    """Plain-array description of a testbed, shared by all kernel backends.

    ``M`` is the curvature matrix (strongly convex), the active-direction
    map (convex, PL) or unused (nonconvex). ``shape`` is the Huber width
    for the convex regime and the sine amplitude for PL.
    """

    __test__ = False

    regime: Regime
    M: np.ndarray
    shape: float
    W: np.ndarray
    Gamma: np.ndarray
    C: np.ndarray
    v_h: np.ndarray
    v_g: np.ndarray
    L_c: float
    noise_h: float
    noise_g: float
    chain_c: float
    chain_q: float
    coupling: str
    lambda_f: float
    lambda_G: float

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def r(self) -> int:
        return self.W.shape[0]

    @property
    def code(self) -> int:
        return REGIME_CODES[self.regime]

    @property
    def tv_lipschitz(self) -> float:
        return self.chain_c / 4.0

    # objective pieces -------------------------------------------------
    def f(self, theta) -> float:
        th = np.asarray(theta, dtype=float)
        if self.regime is Regime.STRONGLY_CONVEX:
            return 0.5 * float(th @ self.M @ th)
        if self.regime is Regime.CONVEX:
            z = self.M @ th
            return float(np.sum(_huber(z, self.shape)))
        if self.regime is Regime.PL:
            z = self.M @ th
            h = z + self.shape * np.sin(z)
            return 0.5 * float(h @ h)
        return 0.25 * float(np.sum((th * th - 1.0) ** 2))

    def grad_f(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        if self.regime is Regime.STRONGLY_CONVEX:
            return self.M @ th
        if self.regime is Regime.CONVEX:
            return self.M.T @ np.clip(self.M @ th, -self.shape, self.shape)
        if self.regime is Regime.PL:
            z = self.M @ th
            return self.M.T @ ((1.0 + self.shape * np.cos(z)) * (z + self.shape * np.sin(z)))
        return th ** 3 - th

    @property
    def f_star(self) -> float:
        return 0.0

    @property
    def theta_star(self) -> np.ndarray:
        # a minimiser; convex and PL testbeds have a whole affine set of them
        if self.regime is Regime.NONCONVEX:
            return np.ones(self.d)
        return np.zeros(self.d)

    def metric(self, theta) -> float:
        if self.regime is Regime.STRONGLY_CONVEX:
            return float(np.sum(np.asarray(theta, float) ** 2))
        if self.regime is Regime.NONCONVEX:
            return float(np.sum(self.grad_f(theta) ** 2))
        return self.f(theta) - self.f_star

    # chain --------------------------------------------------------------
    def transition_matrix(self, theta) -> np.ndarray:
        p = sigmoid(self.chain_c * float(theta[0]))
        q = self.chain_q
        return np.array([[1.0 - p, p], [q, 1.0 - q]])

    def stationary(self, theta) -> np.ndarray:
        p = sigmoid(self.chain_c * float(theta[0]))
        m0 = self.chain_q / (p + self.chain_q)
        return np.array([m0, 1.0 - m0])

    def noise(self, x: int, theta) -> float:
        m0 = self.stationary(theta)[0]
        return (1.0 - m0) if x == 0 else -m0

    # oracles ------------------------------------------------------------
    def _couple(self, e):
        return np.abs(e) if self.coupling == "abs" else e

    def H(self, theta, omega, x) -> np.ndarray:
        e = omega - self.W @ theta
        return (self.grad_f(theta) + self.noise_h * self.noise(x, theta) * self.v_h
                + self.L_c * (self.C @ self._couple(e)))

    def G(self, theta, omega, x) -> np.ndarray:
        return self.Gamma @ (omega - self.W @ theta) + self.noise_g * self.noise(x, theta) * self.v_g

    def sample(self, x, theta, rng) -> int:
        u = rng.random()
        if x == 0:
            return 0 if u < 1.0 - sigmoid(self.chain_c * float(theta[0])) else 1
        return 0 if u < self.chain_q else 1

    def expected_H(self, theta, omega) -> np.ndarray:
        """``E_{X ~ mu_theta} H(theta, omega, X)`` by exact enumeration."""
        mu = self.stationary(theta)
        return mu[0] * self.H(theta, omega, 0) + mu[1] * self.H(theta, omega, 1)

    def expected_G(self, theta, omega) -> np.ndarray:
        mu = self.stationary(theta)
        return mu[0] * self.G(theta, omega, 0) + mu[1] * self.G(theta, omega, 1)

    def omega_star(self, theta) -> np.ndarray:
        return self.W @ np.asarray(theta, dtype=float)

    def problem(self) -> TwoTimescaleProblem:
        kernel = ControlledKernel(sampler=self.sample, finite_matrix=self.transition_matrix)
        truth = GroundTruth(theta_star=self.theta_star, f_star=self.f_star,
                            omega_star=self.omega_star, f=self.f, grad_f=self.grad_f)
        return TwoTimescaleProblem(H=self.H, G=self.G, kernel=kernel, truth=truth,
                                   name=f"testbed-{self.regime.value}", meta={"spec": self})

    def expected_problem(self) -> TwoTimescaleProblem:
        """Noise-free variant: oracles replaced by their stationary expectations."""
        kernel = ControlledKernel(sampler=lambda x, theta, rng: x)
        truth = GroundTruth(theta_star=self.theta_star, f_star=self.f_star,
                            omega_star=self.omega_star, f=self.f, grad_f=self.grad_f)
        return TwoTimescaleProblem(H=lambda th, om, x: self.expected_H(th, om),
                                   G=lambda th, om, x: self.expected_G(th, om),
                                   kernel=kernel, truth=truth,
                                   name=f"expected-{self.regime.value}", meta={"spec": self})

    def monitor(self):
        def mon(state: OptState, evaluate: bool = True):
            if not evaluate:
                return Observation()
            aux = float(np.sum((state.omega - self.omega_star(state.theta)) ** 2))
            return Observation(self.metric(state.theta), aux, True)
        return mon


def _huber(z, delta):
    az = np.abs(z)
    return np.where(az <= delta, 0.5 * z * z, delta * (az - 0.5 * delta))


def _spd(rng, n, lo, hi):
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = lo + (hi - lo) * rng.random(n) if hi > lo else np.full(n, lo)
    S = (Qm * eig) @ Qm.T
    return 0.5 * (S + S.T)


def _unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def pl_probe(spec: TestbedSpec, n_points: int = 100, radius: float = 3.0,
             rng: Optional[np.random.Generator] = None) -> float:
    """Smallest margin ``0.5 |grad f|^2 - lambda_f (f - f*)`` over random probes."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = math.inf
    for _ in range(n_points):
        th = radius * rng.standard_normal(spec.d)
        g = spec.grad_f(th)
        worst = min(worst, 0.5 * float(g @ g) - spec.lambda_f * (spec.f(th) - spec.f_star))
    return worst


def make_testbed_spec(regime, d: int = 2, r: int = 2, seed: int = 0, *,
                      coupling: str = "abs", L_c: float = 1.0,
                      lambda_f: float = 1.0, kappa_f: float = 1.0,
                      lambda_G: float = 1.0, kappa_G: float = 1.0,
                      noise_scale: float = 1.0, chain_c: float = 1.0,
                      chain_q: float = 0.5, huber_delta: float = 1.0,
                      pl_amplitude: float = 0.5, n_active: Optional[int] = None) -> TestbedSpec:
    """Draw a testbed of the given regime.

    ``kappa_f`` and ``kappa_G`` are condition numbers of the curvature and of
    the fast-operator gain; ``1`` gives multiples of the identity. In the
    convex and PL regimes only ``n_active`` directions (default ``ceil(d/2)``)
    carry curvature, leaving a flat subspace.
    """
    regime = Regime(regime)
    if d < 1 or r < 1:
        raise ValueError("d and r must be at least 1")
    if coupling not in ("abs", "linear"):
        raise ValueError("coupling must be 'abs' or 'linear'")
    if not 0.0 < chain_q < 1.0:
        raise ValueError("chain_q must lie in (0, 1)")
    rng = np.random.default_rng(seed)

    shape = 0.0
    lam = lambda_f
    if regime is Regime.STRONGLY_CONVEX:
        M = _spd(rng, d, lambda_f, lambda_f * kappa_f)
    elif regime in (Regime.CONVEX, Regime.PL):
        m = n_active if n_active is not None else math.ceil(d / 2)
        if not 1 <= m <= d:
            raise ValueError("n_active must lie in [1, d]")
        Qm, _ = np.linalg.qr(rng.standard_normal((d, d)))
        scales = np.sqrt(np.linspace(lambda_f, lambda_f * kappa_f, m))
        M = scales[:, None] * Qm[:m]
        if regime is Regime.CONVEX:
            shape = huber_delta
        else:
            if not abs(pl_amplitude) < 1.0:
                raise ConstructionFailure("PL amplitude must satisfy |a| < 1")
            shape = pl_amplitude
            # 0.5|M^T D h|^2 >= 0.5 s_min(M)^2 (1-|a|)^2 |h|^2 = s_min^2 (1-|a|)^2 f
            lam = lambda_f * (1.0 - abs(pl_amplitude)) ** 2
    else:
        M = np.zeros((0, d))

    if d == r:
        W = np.eye(d)
        C = np.eye(d)
    else:
        W = rng.standard_normal((r, d)) / math.sqrt(d)
        C = rng.standard_normal((d, r))
        C /= np.linalg.norm(C, 2)
    Gamma = _spd(rng, r, lambda_G, lambda_G * kappa_G)
    v_h = np.ones(d) if d == 1 else _alternating(d)
    v_g = np.ones(r) if r == 1 else _alternating(r)

    spec = TestbedSpec(regime=regime, M=M, shape=float(shape), W=W, Gamma=Gamma, C=C,
                       v_h=v_h, v_g=v_g, L_c=float(L_c), noise_h=float(noise_scale),
                       noise_g=float(noise_scale), chain_c=float(chain_c),
                       chain_q=float(chain_q), coupling=coupling,
                       lambda_f=float(lam), lambda_G=float(lambda_G))
    if regime is Regime.PL:
        margin = pl_probe(spec, 100, rng=np.random.default_rng(seed + 1))
        if margin < 0.0:
            raise ConstructionFailure(f"PL inequality fails at a probe point (margin {margin:.3e})")
    return spec


def _alternating(n):
    v = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return v


def make_regime_testbed(regime, d: int = 2, r: int = 2, seed: int = 0, **kw) -> TwoTimescaleProblem:
    """Problem instance for one objective structure; see ``make_testbed_spec``."""
    return make_testbed_spec(regime, d, r, seed, **kw).problem()


def default_init(spec: TestbedSpec, value: float = 0.5) -> OptState:
    theta = np.full(spec.d, value)
    return OptState(theta, spec.W @ theta, 0, 0)


@dataclass
class BatchRun:
    """Per-seed trajectories from the fused loop; NaN marks unevaluated steps."""

    metric: np.ndarray
    aux_error: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    seeds: tuple

    def records(self, i: int, schedule):
        from .engine import RunRecord
        n = self.metric.shape[1]
        out = []
        for k in range(n):
            m = self.metric[i, k]
            a = self.aux_error[i, k]
            out.append(RunRecord(k, schedule.alpha(k), schedule.beta(k),
                                 None if np.isnan(m) else float(m),
                                 None if np.isnan(a) else float(a), True))
        return out


def simulate(spec: TestbedSpec, schedule, n_iters: int, seeds, theta0=None, omega0=None,
             x0: int = 0, stride: int = 1, backend: Optional[str] = None) -> BatchRun:
    """Run the testbed for several seeds with the fused kernels.

    Seed ``s`` uses ``default_rng(s)`` exactly as ``engine.run(..., seed=s)``
    would, so results match the generic loop to floating-point rounding.
    """
    from .errors import NonFinite
    from .kernels import testbed as kt
    from ._backend import backend as active_backend

    if n_iters < 1:
        raise ValueError("n_iters must be at least 1")
    seeds = tuple(int(s) for s in seeds)
    theta0 = np.full(spec.d, 0.5) if theta0 is None else np.asarray(theta0, dtype=float)
    omega0 = spec.W @ theta0 if omega0 is None else np.asarray(omega0, dtype=float)
    U = np.empty((len(seeds), n_iters))
    for i, s in enumerate(seeds):
        U[i] = np.random.default_rng(s).random(n_iters)
    metric = np.full((len(seeds), n_iters), np.nan)
    aux = np.full((len(seeds), n_iters), np.nan)
    th_out = np.empty((len(seeds), spec.d))
    om_out = np.empty((len(seeds), spec.r))
    name = backend or active_backend()
    fn = kt.run_numba if name == "numba" else kt.run_numpy
    M = spec.M if spec.M.size else np.zeros((1, spec.d))
    fail = fn(spec.code, np.ascontiguousarray(M), spec.shape, spec.W, spec.Gamma, spec.C,
              spec.v_h, spec.v_g, spec.L_c, spec.noise_h, spec.noise_g, spec.chain_c,
              spec.chain_q, spec.coupling == "abs", schedule.alphas(n_iters),
              schedule.betas(n_iters), theta0, omega0, int(x0), U, int(stride),
              metric, aux, th_out, om_out)
    if np.any(fail >= 0):
        i = int(np.argmax(fail >= 0))
        raise NonFinite(f"seed {seeds[i]} produced a non-finite iterate at k={int(fail[i])}")
    return BatchRun(metric, aux, th_out, om_out, seeds)
