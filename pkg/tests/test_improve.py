import numpy as np
import pytest

from ssg_popi.game import Dominance, GameError, compare, example_policy, uniform_policy
from ssg_popi.improve import (
    NecessaryVerdict,
    Scalarization,
    SufficientVerdict,
    certificate,
    check_necessary_condition,
    check_sufficient_condition,
    default_scalarization,
    delta,
    in_improving_set,
    scalarize,
)
from ssg_popi.mdp import follower_best_response, leader_dagger_value, leader_q
from ssg_popi.oracle import grid_policies
from conftest import rgame


def test_scalarize_examples(example):
    assert scalarize(Scalarization.from_weights([1, 1]), [2.0, 0.0]) == 1.0
    L = default_scalarization(example)
    np.testing.assert_array_equal(L.weights, example.initial_distribution)
    with pytest.raises(ValueError):
        scalarize(L, [1.0, 2.0, 3.0])


def test_scalarization_validation():
    with pytest.raises(GameError):
        Scalarization(np.array([0.0, 1.0]))
    with pytest.raises(GameError):
        Scalarization.from_weights([-1.0, 2.0])
    w = Scalarization.from_weights([1.0, 0.0]).weights
    assert np.all(w > 0) and abs(w.sum() - 1) <= 1e-12
    assert w[1] == pytest.approx(5e-7)


def test_pareto_compliance():
    rng = np.random.default_rng(0)
    for _ in range(500):
        L = Scalarization.from_weights(rng.dirichlet(np.ones(4)) + 1e-3)
        v2 = rng.normal(size=4)
        v1 = v2 + np.where(rng.random(4) < 0.5, rng.random(4), 0.0)
        v1[rng.integers(4)] += 1e-3
        assert compare(v1, v2) is Dominance.STRICTLY_DOMINATES
        assert L(v1) > L(v2)


def test_current_iterate_is_in_improving_set():
    game = rgame(2)
    f = uniform_policy(game)
    v, _ = leader_dagger_value(game, f)
    ok, cert = in_improving_set(game, v, f)
    assert ok and cert.relation is Dominance.EQUAL
    assert abs(cert.delta) <= 1e-9
    assert delta(game, v, f) == pytest.approx(0.0, abs=1e-9)


def test_tradeoff_candidate_not_in_improving_set(example):
    v, _ = leader_dagger_value(example, example_policy(0, 1), "perturbed")
    ok, cert = in_improving_set(example, v, example_policy(1, 0), "perturbed")
    assert not ok
    assert cert.q_values[1] < v[1]


def test_strictly_improving_candidate_is_accepted(example_myopic):
    v, _ = leader_dagger_value(example_myopic, example_policy(0.8, 0))
    ok, cert = in_improving_set(example_myopic, v, example_policy(1, 0))
    assert ok and cert.relation is Dominance.STRICTLY_DOMINATES


def test_delta_matches_hand_expansion():
    game = rgame(11, S=2, A=2, B=2)
    ref = uniform_policy(game)
    v, _ = leader_dagger_value(game, ref)
    f = np.array([[0.9, 0.1], [0.2, 0.8]])
    g = follower_best_response(game, f).policy
    q = leader_q(game, v, f)
    expected = -np.inf
    for s in range(2):
        total = 0.0
        for t in range(2):
            p = sum(f[s, a] * game.transition[s, a, g[s], t] for a in range(2))
            total += p * (q[t] - v[t])
        expected = max(expected, total)
    assert delta(game, v, f) == pytest.approx(expected, abs=1e-12)


def test_certificate_fields():
    game = rgame(13)
    v, _ = leader_dagger_value(game, uniform_policy(game))
    f = np.random.default_rng(2).dirichlet(np.ones(2), size=3)
    cert = certificate(game, v, f)
    assert cert.relation is compare(cert.q_values, v)
    assert cert.delta == pytest.approx(delta(game, v, f))
    d = cert.to_dict()
    assert set(d) == {"q_values", "reference_values", "relation", "delta", "sufficient_gap_state"}


def test_necessary_condition_examples(example):
    probes = grid_policies(example, 21)
    rep = check_necessary_condition(example, example_policy(1, 0), probes)
    assert rep.verdict is NecessaryVerdict.INCONCLUSIVE_PASS and rep.num_probes == 441
    rep = check_necessary_condition(example, example_policy(0.5, 0), probes)
    assert rep.verdict is NecessaryVerdict.FAILS
    # (p, q) = (1, 0) is among the offenders
    assert any(np.allclose(probes[i], example_policy(1, 0)) for i in rep.offenders)
    assert check_necessary_condition(example, example_policy(1, 0), []).verdict is NecessaryVerdict.INCONCLUSIVE_PASS


def test_necessary_condition_never_flags_equal_values():
    game = rgame(14)
    ref = uniform_policy(game)
    v, _ = leader_dagger_value(game, ref)
    probes = grid_policies(game, 6)
    rep = check_necessary_condition(game, ref, probes)
    for n in rep.offenders:
        vn, _ = leader_dagger_value(game, probes[n])
        assert compare(vn, v) is Dominance.STRICTLY_DOMINATES


def test_sufficient_condition_examples(example_myopic):
    probes = grid_policies(example_myopic, 21)
    rep = check_sufficient_condition(example_myopic, example_policy(1, 0), probes)
    assert rep.verdict is SufficientVerdict.CERTIFIED_OVER_PROBES
    rep = check_sufficient_condition(example_myopic, example_policy(0.5, 0), probes)
    assert rep.verdict is SufficientVerdict.NOT_CERTIFIED
    assert any(np.allclose(probes[i], example_policy(1, 0)) for i in rep.offenders)
    assert rep.to_dict()["verdict"] == "NOT-CERTIFIED"


def test_sufficient_condition_myopic_reduction():
    # with gamma_A = 0 condition (ii) is "Q below V somewhere", i.e. f outside the improving set
    game = rgame(15, S=2, A=2, B=2, gamma_A=0.0)
    ref = uniform_policy(game)
    v, _ = leader_dagger_value(game, ref)
    probes = grid_policies(game, 11)
    rep = check_sufficient_condition(game, ref, probes)
    for n in range(len(probes)):
        ok, cert = in_improving_set(game, v, probes[n])
        offender = n in rep.offenders
        equal = cert.relation is Dominance.EQUAL
        below = np.any(cert.q_values < v - 1e-9)
        assert offender == (not equal and not below)


def test_improving_and_equal_implies_equal_dagger():
    rng = np.random.default_rng(3)
    hits = 0
    for seed in range(40):
        game = rgame(100 + seed, S=2, A=2, B=2)
        grid = grid_policies(game, 5)
        ref = grid[rng.integers(len(grid))]
        v, _ = leader_dagger_value(game, ref)
        for f in grid:
            ok, cert = in_improving_set(game, v, f)
            if ok and cert.relation is Dominance.EQUAL:
                hits += 1
                vf, _ = leader_dagger_value(game, f)
                assert compare(vf, v) is Dominance.EQUAL
    assert hits >= 40
