"""Randomized property checks."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ssg_popi.game import (
    Dominance, compare, make_example_game, marginal_reward, marginal_transition, random_game, validate_game,
)
from ssg_popi.mdp import follower_best_response, leader_dagger_value, leader_q
from ssg_popi.popi import project_simplex

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
FLIP = {
    Dominance.EQUAL: Dominance.EQUAL,
    Dominance.STRICTLY_DOMINATES: Dominance.DOMINATED,
    Dominance.DOMINATED: Dominance.STRICTLY_DOMINATES,
    Dominance.INCOMPARABLE: Dominance.INCOMPARABLE,
}

seeds = st.integers(0, 2**31 - 1)
gammas = st.sampled_from([0.0, 0.5, 0.9, 0.99])
positive = st.floats(1e-3, 10.0, allow_nan=False)


def _simplex(rng, n):
    return rng.dirichlet(np.ones(n))


@SETTINGS
@given(seeds, st.floats(0, 1))
def test_marginals_are_linear_in_the_leader_mix(seed, lam):
    game = random_game(np.random.default_rng(seed), 3, 3, 2, gamma_A=0.5, gamma_B=0.5)
    rng = np.random.default_rng(seed)
    p, q = _simplex(rng, 3), _simplex(rng, 3)
    mix = lam * p + (1 - lam) * q
    for s in range(3):
        for b in range(2):
            r = marginal_reward(game, "A", s, mix, b)
            assert abs(r - lam * marginal_reward(game, "A", s, p, b)
                       - (1 - lam) * marginal_reward(game, "A", s, q, b)) <= 1e-12
            t = marginal_transition(game, s, mix, b)
            assert abs(t.sum() - 1.0) <= 1e-12 and np.all(t >= 0)
            np.testing.assert_allclose(
                t, lam * marginal_transition(game, s, p, b) + (1 - lam) * marginal_transition(game, s, q, b), atol=1e-12)


@SETTINGS
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=5).flatmap(
    lambda v: st.tuples(st.just(v), st.lists(st.floats(-5, 5), min_size=len(v), max_size=len(v)))))
def test_compare_is_antisymmetric(pair):
    v, w = pair
    assert compare(w, v) is FLIP[compare(v, w)]


@SETTINGS
@given(positive, positive, gammas, gammas)
def test_example_game_is_always_valid(x, y, gA, gB):
    assert validate_game(make_example_game(x, y, gA, gB)) == []


@SETTINGS
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_simplex_projection_is_a_distribution_and_idempotent(y):
    p = project_simplex(np.array(y))[0]
    assert np.all(p >= 0) and abs(p.sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(project_simplex(p)[0], p, atol=1e-12)


@SETTINGS
@given(seeds, gammas)
def test_leader_improvement_properties(seed, gA):
    game = random_game(np.random.default_rng(seed), 3, 2, 2, gamma_A=gA, gamma_B=0.8)
    rng = np.random.default_rng(seed)
    f_ref = rng.dirichlet(np.ones(2), size=3)
    f = f_ref if seed % 3 == 0 else rng.dirichlet(np.ones(2), size=3)
    v_ref, _ = leader_dagger_value(game, f_ref)
    v_f, _ = leader_dagger_value(game, f)
    g = follower_best_response(game, f).policy
    q = leader_q(game, v_ref, f, g=g)
    eta = 1e-9
    if np.all(q >= v_ref - eta):
        assert np.all(v_f >= q - 1e-8)
    assert (compare(q, v_ref, eta) is Dominance.EQUAL) == (compare(v_f, v_ref, eta) is Dominance.EQUAL)
    if f is f_ref:
        np.testing.assert_allclose(q, v_ref, atol=1e-9)


@SETTINGS
@given(seeds, st.sampled_from(["lowest", "optimistic", "perturbed"]))
def test_best_response_beats_every_deterministic_deviation(seed, tie):
    game = random_game(np.random.default_rng(seed), 2, 2, 3, gamma_A=0.5, gamma_B=0.9)
    f = np.random.default_rng(seed).dirichlet(np.ones(2), size=2)
    br = follower_best_response(game, f, tie)
    s = np.arange(2)
    for b0 in range(3):
        for b1 in range(3):
            g = np.array([b0, b1])
            r = np.einsum("sa,sa->s", f, game.reward_follower[s, :, g])
            P = np.einsum("sa,sat->st", f, game.transition[s, :, g, :])
            v = np.linalg.solve(np.eye(2) - 0.9 * P, r)
            assert np.all(br.follower_values >= v - 1e-9)
