import json

import numpy as np
import pytest

from ssg_popi.game import (
    Dominance,
    Game,
    GameError,
    check_follower_policy,
    check_leader_policy,
    compare,
    dump_game,
    example_policy,
    load_game,
    make_example_game,
    marginal_reward,
    marginal_transition,
    validate_game,
)
from conftest import rgame, single_state_game


def test_example_game_is_valid(example):
    assert validate_game(example) == []
    assert example.transition.shape == (2, 2, 2, 2)


def test_transition_slice_not_summing_to_one_is_reported(example):
    T = np.array(example.transition)
    T[0, 1, 0] *= 0.9
    problems = validate_game(example.replace(transition=T))
    assert len(problems) == 1
    assert "transition[0][1][0]" in problems[0]


def test_discount_of_one_is_reported(example):
    problems = validate_game(example.replace(gamma_leader=1.0))
    assert len(problems) == 1 and "gamma_leader" in problems[0]


def test_other_invariants_are_reported(example):
    r = np.array(example.reward_leader)
    r[1, 0, 1] = np.inf
    assert any("reward_leader[1, 0, 1]" in p for p in validate_game(example.replace(reward_leader=r)))
    assert any("initial_distribution" in p for p in validate_game(example.replace(initial_distribution=[0.7, 0.7])))
    T = np.array(example.transition)
    T[0, 0, 0] = [1.5, -0.5]
    assert any("negative" in p for p in validate_game(example.replace(transition=T)))


def test_marginal_reward_examples(example):
    assert marginal_reward(example, "A", 0, [1.0, 0.0], 0) == 1.0
    for p in (0.0, 0.3, 1.0):
        assert marginal_reward(example, "A", 0, [p, 1 - p], 0) == pytest.approx(p, abs=1e-15)
    g = single_state_game([[4.0], [-2.0]], [[0.0], [0.0]])
    assert marginal_reward(g, "A", 0, [0.5, 0.5], 0) == 1.0


def test_marginal_transition_examples(example):
    np.testing.assert_array_equal(marginal_transition(example, 0, [1.0, 0.0], 0), [1.0, 0.0])
    np.testing.assert_array_equal(marginal_transition(example, 1, [0.0, 1.0], 1), example.transition[1, 1, 1])
    # a1 with b1 stays at s1, a2 moves to s2
    np.testing.assert_allclose(marginal_transition(example, 0, [0.3, 0.7], 0), [0.3, 0.7], atol=1e-15)


def test_marginal_index_errors(example):
    with pytest.raises(IndexError):
        marginal_reward(example, "A", 2, [1, 0], 0)
    with pytest.raises(IndexError):
        marginal_transition(example, 0, [1, 0], 5)


def test_compare_examples():
    assert compare([1.0, 2.0], [1.0, 2.0]) is Dominance.EQUAL
    assert compare([2.0, 1.0], [1.0, 1.0], 1e-9) is Dominance.STRICTLY_DOMINATES
    assert compare([1.0, 1.0], [2.0, 1.0]) is Dominance.DOMINATED
    assert compare([2.0, 0.0], [1.0, 1.0]) is Dominance.INCOMPARABLE
    assert compare([1.0, 1.0 + 5e-10], [1.0, 1.0]) is Dominance.EQUAL
    with pytest.raises(ValueError):
        compare([1.0], [1.0, 2.0])


def test_example_game_structure(example):
    # (a2, b1) at s1 pays (0, -y) and moves to s2
    assert example.reward_leader[0, 1, 0] == 0.0
    assert example.reward_follower[0, 1, 0] == -3.0
    np.testing.assert_array_equal(example.transition[0, 1, 0], [0.0, 1.0])
    np.testing.assert_array_equal(example.transition[1, 0, 1], [1.0, 0.0])
    assert example.reward_follower[1, 0, 1] == 1.0


@pytest.mark.parametrize("x,y", [(0.0, 1.0), (1.0, -1.0), (-1.0, 3.0)])
def test_example_game_rejects_bad_parameters(x, y):
    with pytest.raises(GameError):
        make_example_game(x, y, 0.5, 0.9)


def test_example_game_rejects_bad_discount():
    with pytest.raises(GameError):
        make_example_game(1.0, 3.0, 1.0, 0.9)


def test_json_round_trip(tmp_path):
    g = rgame(4)
    path = tmp_path / "g.json"
    dump_game(g, path)
    data = json.loads(path.read_text())
    assert list(data) == [
        "num_states", "num_leader_actions", "num_follower_actions", "transition",
        "reward_leader", "reward_follower", "gamma_leader", "gamma_follower", "initial_distribution",
    ]
    h = load_game(path)
    for name in ("transition", "reward_leader", "reward_follower", "initial_distribution"):
        np.testing.assert_array_equal(getattr(g, name), getattr(h, name))
    assert (h.gamma_leader, h.gamma_follower) == (g.gamma_leader, g.gamma_follower)


def test_loader_rejects_and_renormalizes(tmp_path, example):
    data = example.to_dict()
    data["transition"][0][0][0] = [0.9999999, 1e-8]
    path = tmp_path / "g.json"
    path.write_text(json.dumps(data))
    with pytest.raises(GameError):
        load_game(path)
    g = load_game(path, renormalize=True)
    assert abs(g.transition[0, 0, 0].sum() - 1.0) <= 1e-12
    data = example.to_dict()
    data["num_states"] = 3
    path.write_text(json.dumps(data))
    with pytest.raises(GameError, match="declared sizes"):
        load_game(path)
    path.write_text("{not json")
    with pytest.raises(GameError):
        load_game(path)
    del data["gamma_leader"]
    path.write_text(json.dumps(data))
    with pytest.raises(GameError, match="gamma_leader"):
        load_game(path)


def test_policy_checks(example):
    f = check_leader_policy(example, example_policy(0.25, 1.0))
    np.testing.assert_array_equal(f, [[0.25, 0.75], [1.0, 0.0]])
    with pytest.raises(GameError):
        check_leader_policy(example, [[0.5, 0.6], [1.0, 0.0]])
    with pytest.raises(GameError):
        check_leader_policy(example, [[1.0, 0.0]])
    with pytest.raises(GameError):
        check_follower_policy(example, [0, 2])
    assert check_follower_policy(example, [1, 0]).tolist() == [1, 0]


def test_value_bound(example):
    assert example.value_bound("A") == pytest.approx(2.0)
    assert example.value_bound("B") == pytest.approx(30.0)


def test_game_arrays_are_read_only(example):
    with pytest.raises(ValueError):
        example.transition[0, 0, 0, 0] = 0.5
    assert isinstance(example, Game)
