import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tts_opt import engine, mdp
from tts_opt.errors import DimensionMismatch
from tts_opt.schedules import regime_schedule

P = [[[0.9, 0.1], [0.2, 0.8]], [[0.7, 0.3], [0.05, 0.95]]]
R = [[1.0, -0.5], [-1.0, 0.5]]
FIXTURE = mdp.TabularMdp(P=P, R=R, features=np.eye(2))

logits = arrays(float, 4, elements=st.floats(-4, 4))


def test_softmax_examples():
    assert np.allclose(mdp.policy(np.zeros(2), 0), [0.5, 0.5])
    assert np.allclose(mdp.policy([math.log(2.0), 0.0], 0), [2 / 3, 1 / 3], atol=1e-15)


@given(logits, st.floats(-50, 50), st.integers(0, 1))
def test_softmax_shift_invariance(theta, c, s):
    shifted = theta.copy().reshape(2, 2)
    shifted[s] += c
    assert np.allclose(mdp.policy(theta, s, 2), mdp.policy(shifted.ravel(), s, 2), atol=1e-12)


def test_fixture_average_reward_at_uniform_policy():
    # uniform policy: P_theta rows (0.55, 0.45), (0.375, 0.625); mu = (5/11, 6/11);
    # r_pi = (0.25, -0.25), so J = (5 - 6) / 44
    assert np.allclose(mdp.exact_stationary(FIXTURE, np.zeros(4)), [5 / 11, 6 / 11], atol=1e-14)
    assert mdp.exact_avg_reward(FIXTURE, np.zeros(4)) == pytest.approx(-1 / 44, abs=1e-14)


@given(logits, st.floats(-1, 1))
def test_constant_reward_is_uninformative(theta, c):
    m = mdp.TabularMdp(P=P, R=np.full((2, 2), c), features=np.eye(2))
    assert mdp.exact_avg_reward(m, theta) == pytest.approx(c, abs=1e-12)
    assert np.abs(mdp.exact_diff_value(m, theta)).max() < 1e-12
    assert np.abs(mdp.exact_policy_gradient(m, theta)).max() < 1e-12


@given(logits)
def test_oracles_consistent_at_critic_root(theta):
    om = mdp.critic_root(FIXTURE, theta)
    assert np.abs(mdp.expected_G(FIXTURE, theta, om)).max() <= 1e-10
    grad = mdp.exact_policy_gradient(FIXTURE, theta)
    assert np.abs(mdp.expected_H(FIXTURE, theta, om) + grad).max() <= 1e-10


@given(logits)
def test_policy_gradient_matches_finite_differences(theta):
    h = 1e-6
    fd = np.array([(mdp.exact_avg_reward(FIXTURE, theta + h * e)
                    - mdp.exact_avg_reward(FIXTURE, theta - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.abs(mdp.exact_policy_gradient(FIXTURE, theta) - fd).max() <= 1e-6


@given(logits)
def test_projected_bellman_root_recovers_values(theta):
    om = mdp.critic_root(FIXTURE, theta)
    assert om[0] == pytest.approx(mdp.exact_avg_reward(FIXTURE, theta), abs=1e-12)
    shift = FIXTURE.features @ om[1:] - mdp.exact_diff_value(FIXTURE, theta)
    assert np.ptp(shift) < 1e-10


def test_reward_block_of_fast_operator():
    m = mdp.TabularMdp(P=P, R=np.zeros((2, 2)), features=np.eye(2))
    g = mdp.G_oracle(m, np.zeros(4), np.array([0.0, 0.3, -0.2]), (0, 1, 1))
    assert g[0] == 0.0


def test_monotonicity_probe():
    # tabular features leave the constant direction unpenalised
    assert abs(mdp.critic_monotonicity(FIXTURE, np.zeros(4))) < 1e-12
    m = mdp.TabularMdp(P=P, R=R, features=[[1.0], [-1.0]])
    assert mdp.critic_monotonicity(m, np.array([0.3, -0.2, 0.5, 1.0])) > 0


@given(logits, st.integers(0, 1))
def test_score_function_has_zero_mean(theta, s):
    pi = mdp.policy_table(FIXTURE, theta)[s]
    mean = sum(pi[a] * mdp.grad_log_pi(FIXTURE, theta, s, a) for a in range(2))
    assert np.abs(mean).max() < 1e-12


def test_validation():
    with pytest.raises(ValueError):
        mdp.TabularMdp(P=P, R=[[2.0, 0.0], [0.0, 0.0]], features=np.eye(2))
    with pytest.raises(ValueError):
        mdp.TabularMdp(P=[[[0.5, 0.6], [0.2, 0.8]], [[0.7, 0.3], [0.05, 0.95]]], R=R,
                       features=np.eye(2))
    with pytest.raises(ValueError):
        mdp.TabularMdp(P=P, R=R, features=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(DimensionMismatch):
        mdp.policy_table(FIXTURE, np.zeros(3))


def test_sampler_visits_transitions_at_stationary_rates():
    theta = np.array([0.4, -0.3, 0.1, 0.8])
    prob = mdp.make_ac_problem(FIXTURE)
    rng = np.random.default_rng(3)
    X = mdp.initial_state(FIXTURE, theta, rng).sample
    counts = np.zeros((2, 2, 2))
    n = 40_000
    for _ in range(n):
        X = prob.kernel.sample(X, theta, rng)
        counts[X] += 1
    law = mdp.transition_law(FIXTURE, theta)
    assert np.abs(counts / n - law).max() < 0.02


def test_actor_critic_run_is_deterministic_and_improves():
    prob = mdp.make_ac_problem(FIXTURE)
    sched = regime_schedule("nonconvex", 0.05, 0.5)

    def go():
        rng = np.random.default_rng(5)
        init = mdp.initial_state(FIXTURE, None, rng)
        return engine.run(prob, sched, init, 3000, None, rng, return_state=True)

    (ra, sa), (rb, sb) = go(), go()
    assert ra == rb and np.array_equal(sa.theta, sb.theta)
    assert mdp.exact_avg_reward(FIXTURE, sa.theta) > mdp.exact_avg_reward(FIXTURE, np.zeros(4))
