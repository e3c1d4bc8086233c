import numpy as np
import pytest

from ssg_popi.fpe import (
    ValuePair,
    all_follower_policies,
    apply_operator,
    iterate_to_fixed_point,
    one_step_follower_response,
    one_step_leader_solve,
    stage_payoffs,
    verify_fixed_point_characterization,
)
from ssg_popi.mdp import evaluate_pair
from ssg_popi.oracle import grid_policies, simplex_lattice
from conftest import rgame, single_state_game, zero_game


def boundary_stage_game():
    # follower prefers b2 once p >= 3/4; leader only earns under (a1, b1)
    return single_state_game([[1.0, 0.0], [0.0, 0.0]], [[0.0, 1.0], [3.0, 0.0]])


def test_follower_response_examples(example):
    g = single_state_game([[0.0, 0.0]], [[1.0, 2.0]])
    assert one_step_follower_response(g, 0, [1.0], np.array([100.0])) == 1
    g1 = single_state_game([[1.0]], [[0.0]])
    assert one_step_follower_response(g1, 0, [1.0], np.zeros(1)) == 0
    # continuation strongly favouring staying at s1
    assert one_step_follower_response(example, 0, [1.0, 0.0], np.array([20.0, 0.0])) == 0
    assert one_step_follower_response(example, 0, [1.0, 0.0], np.zeros(2)) == 1


def test_single_follower_action_is_linear_max():
    g = single_state_game([[0.3], [0.9], [0.1]], [[0.0], [0.0], [0.0]])
    sol = one_step_leader_solve(g, 0, ValuePair.zeros(1))
    np.testing.assert_allclose(sol.leader_dist, [0, 1, 0])
    assert sol.payoffs[0] == pytest.approx(0.9)


def test_region_boundary_is_attained():
    g = boundary_stage_game()
    sol = one_step_leader_solve(g, 0, ValuePair.zeros(1), "optimistic")
    np.testing.assert_allclose(sol.leader_dist, [0.75, 0.25], atol=1e-12)
    assert sol.payoffs[0] == pytest.approx(0.75, abs=1e-12)
    assert sol.follower_action == 0 and sol.boundary_tie
    # pessimistic: the follower breaks the tie against the leader
    sol = one_step_leader_solve(g, 0, ValuePair.zeros(1), "pessimistic")
    assert sol.payoffs[0] < 0.75


def test_example_game_zero_continuation(example):
    # a2 costs the follower y under both actions, so b2 is weakly best for every mix
    sol = one_step_leader_solve(example, 0, ValuePair.zeros(2))
    assert sol.payoffs[0] == pytest.approx(0.0, abs=1e-12)


def test_zero_continuation_is_stage_stackelberg():
    g = rgame(3, S=1, A=2, B=3)
    sol = one_step_leader_solve(g, 0, ValuePair.zeros(1))
    qA, qB = g.reward_leader[0], g.reward_follower[0]
    best = -np.inf
    for x in simplex_lattice(2, 2001):
        fb = x @ qB
        b = int(np.argmax(fb))
        best = max(best, x @ qA[:, b])
    assert sol.payoffs[0] >= best - 1e-8


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("A", [2, 3])
def test_leader_solve_beats_dense_grid(seed, A):
    game = rgame(seed, S=2, A=A, B=3)
    rng = np.random.default_rng(seed)
    v = ValuePair(rng.normal(size=2), rng.normal(size=2))
    grid = simplex_lattice(A, 201 if A == 2 else 61)
    for s in range(2):
        sol = one_step_leader_solve(game, s, v)
        qA, qB = stage_payoffs(game, s, v)
        fb = grid @ qB
        # every grid point lies in some closed region and its region's best response is maximal
        assert np.all(fb.max(axis=1) >= fb.max(axis=1) - 1e-9)
        tied = fb >= fb.max(axis=1, keepdims=True) - 1e-9
        la = np.where(tied, grid @ qA, -np.inf).max(axis=1)
        assert sol.payoffs[0] >= la.max() - 1e-8
        fx = sol.leader_dist @ qB
        assert fx[sol.follower_action] >= fx.max() - 1e-9


def test_lp_fallback_matches_vertex_enumeration(monkeypatch):
    import ssg_popi.fpe as fpe

    game = rgame(4, S=2, A=3, B=3)
    v = ValuePair(np.array([0.5, -0.5]), np.array([1.0, 0.0]))
    exact = [one_step_leader_solve(game, s, v).payoffs[0] for s in range(2)]
    monkeypatch.setattr(fpe, "VERTEX_SYSTEM_CAP", 0)
    lp = [one_step_leader_solve(game, s, v).payoffs[0] for s in range(2)]
    np.testing.assert_allclose(lp, exact, atol=1e-7)


def test_operator_on_zero_game_and_determinism():
    w, f, g, _ = apply_operator(zero_game(), ValuePair.zeros(2))
    assert np.all(w.v_A == 0) and np.all(w.v_B == 0)
    game = rgame(6)
    v = ValuePair(np.arange(3.0), -np.arange(3.0))
    a, b = apply_operator(game, v), apply_operator(game, v)
    assert a[0].v_A.tobytes() == b[0].v_A.tobytes() and a[1].tobytes() == b[1].tobytes()


def test_cooperative_game_converges_to_its_policy_value():
    game = rgame(5, cooperative=True)
    rep = iterate_to_fixed_point(game)
    assert rep.status == "converged"
    assert rep.history[-1] <= 1e-8
    for player, v in (("A", rep.values.v_A), ("B", rep.values.v_B)):
        np.testing.assert_allclose(evaluate_pair(game, player, rep.leader_policy, rep.follower_policy), v, atol=1e-7)
    np.testing.assert_allclose(rep.values.v_A, rep.values.v_B, atol=1e-7)


def test_fixed_point_characterization_on_cooperative_game():
    game = rgame(5, cooperative=True)
    rep = iterate_to_fixed_point(game)
    self_check = verify_fixed_point_characterization(game, rep.values, rep.leader_policy, rep.leader_policy[None],
                                 rep.follower_policy[None])
    assert self_check.max_violation <= 1e-7
    full = verify_fixed_point_characterization(game, rep.values, rep.leader_policy, grid_policies(game, 21), all_follower_policies(game))
    assert full.max_violation <= 1e-6
    assert full.num_follower_probes == 27 and full.num_leader_probes == 21**3


def test_iteration_reports():
    rep = iterate_to_fixed_point(zero_game(), max_iters=5)
    assert rep.status == "converged" and rep.iterations == 1
    d = rep.to_dict()
    assert set(d) >= {"status", "iterations", "values", "history", "cycle_lag"}
    with pytest.raises(ValueError):
        iterate_to_fixed_point(zero_game(), tol=0.0)
    slow = iterate_to_fixed_point(rgame(1, gamma_A=0.99, gamma_B=0.99), max_iters=3)
    assert slow.status == "max-iters" and len(slow.history) == 3


def test_single_leader_action_game():
    # the leader has no choice; the operator reduces to follower value iteration
    from ssg_popi.game import Game

    T = np.zeros((2, 1, 2, 2))
    T[0, 0, :, 1] = 1.0
    T[1, 0, :, 0] = 1.0
    r = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    game = Game(T, r, r, 0.5, 0.5, np.array([0.5, 0.5]))
    rep = iterate_to_fixed_point(game)
    assert rep.status == "converged"
    np.testing.assert_allclose(rep.values.v_B, [2.0, 2.0], atol=1e-7)
