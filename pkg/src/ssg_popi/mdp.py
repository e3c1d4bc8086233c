"""Follower best responses, policy evaluation and leader dagger values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .game import Game, check_follower_policy, check_leader_policy

DEFAULT_TIE_BREAK = "lowest"


@dataclass(frozen=True)
class BestResponseResult:
    policy: np.ndarray           # (S,) follower actions
    follower_values: np.ndarray  # (S,) optimal follower values
    follower_q: np.ndarray       # (S, B)
    tie_margin: np.ndarray       # (S,) best minus second-best follower Q


def _tie_code(tie_break: str) -> int:
    try:
        return kernels.TIE_RULES[tie_break]
    except KeyError:
        raise ValueError(f"tie_break must be one of {sorted(kernels.TIE_RULES)}, got {tie_break!r}") from None


def best_response_batch(game: Game, F: np.ndarray, tie_break: str = DEFAULT_TIE_BREAK):
    """Batched follower best responses for leader policies ``F`` of shape (N, S, A)."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    return kernels.best_response_batch(
        game.transition, game.reward_leader, game.reward_follower, game.gamma_follower, F, _tie_code(tie_break)
    )


def evaluate_batch(game: Game, player: str, F: np.ndarray, G: np.ndarray) -> np.ndarray:
    F = np.ascontiguousarray(F, dtype=np.float64)
    G = np.ascontiguousarray(G, dtype=np.int64)
    return kernels.evaluate_batch(game.transition, game.reward(player), game.gamma(player), F, G)


def dagger_values_batch(game: Game, F: np.ndarray, tie_break: str = DEFAULT_TIE_BREAK):
    """Leader values under the best-response follower for every policy in ``F``.

    Returns ``(VA, G)``.
    """
    G = best_response_batch(game, F, tie_break)[0]
    return evaluate_batch(game, "A", F, G), G


def follower_best_response(game: Game, f, tie_break: str = DEFAULT_TIE_BREAK) -> BestResponseResult:
    """Solve the follower MDP induced by ``f`` exactly (Howard policy iteration).

    Ties within 1e-10 are resolved by ``tie_break``:

    * ``lowest``: smallest follower action index.
    * ``optimistic``: the tied action with the largest immediate leader reward
      ``r_A(s, f(s), b)``, then lowest index.
    * ``perturbed``: the tied action that stays best when the leader trembles
      toward uniform play at that state (largest ``mean_a Q_B(s, a, b)``),
      then lowest index.
    """
    f = check_leader_policy(game, f)
    G, V, Q, margin = best_response_batch(game, f[None], tie_break)
    return BestResponseResult(G[0], V[0], Q[0], margin[0])


def evaluate_pair(game: Game, player: str, f, g) -> np.ndarray:
    """Exact value of the stationary pair (f, g) for ``player`` via a linear solve."""
    f = check_leader_policy(game, f)
    g = check_follower_policy(game, g)
    return evaluate_batch(game, player, f[None], g[None])[0]


def induced_chain(game: Game, player: str, f, g):
    """Reward vector r^{fg} and transition matrix P^{fg} of the pair (f, g)."""
    r = game.reward(player)
    S = game.num_states
    s = np.arange(S)
    r_fg = np.einsum("sa,sa->s", f, r[s, :, g])
    P_fg = np.einsum("sa,sat->st", f, game.transition[s, :, g, :])
    return r_fg, P_fg


def leader_dagger_value(game: Game, f, tie_break: str = DEFAULT_TIE_BREAK):
    """Return ``(V_A^{f dagger}, g*)`` with ``g*`` the follower's best response to ``f``."""
    f = check_leader_policy(game, f)
    va, G = dagger_values_batch(game, f[None], tie_break)
    return va[0], G[0]


def leader_q(game: Game, v_ref, f, tie_break: str = DEFAULT_TIE_BREAK, g=None) -> np.ndarray:
    """Q_A(s, f) = r_A(s, f(s), g(s)) + gamma_A E[v_ref(s')] with g the best response to f.

    Pass ``g`` to skip the best-response solve when it is already known.
    """
    f = check_leader_policy(game, f)
    if g is None:
        g = follower_best_response(game, f, tie_break).policy
    r, P = induced_chain(game, "A", f, g)
    return r + game.gamma_leader * P @ np.asarray(v_ref, dtype=np.float64)


def induced_batch(game: Game, player: str, F: np.ndarray, G: np.ndarray):
    """Batched :func:`induced_chain`: ``(N, S)`` rewards and ``(N, S, S)`` transitions."""
    return kernels._numpy.induced(game.transition, game.reward(player), F, G)


def q_batch(game: Game, v_ref, F: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Leader Q vectors for many (f, g) pairs against the same reference values."""
    r, P = induced_batch(game, "A", F, G)
    return r + game.gamma_leader * (P @ np.asarray(v_ref, dtype=np.float64))
