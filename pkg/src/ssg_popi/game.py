"""Game model for two-player stochastic Stackelberg games.

Tensors are dense and indexed ``transition[s, a, b, s']``,
``reward_*[s, a, b]``. Leader policies are ``(S, A)`` row-stochastic arrays,
follower policies are integer vectors of length ``S``, and value functions are
float vectors of length ``S``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ETA = 1e-9
PROB_TOL = 1e-12


class GameError(ValueError):
    """Raised when a game, policy or parameter fails validation."""


class Dominance(enum.Enum):
    EQUAL = "equal"
    WEAKLY_DOMINATES = "weakly-dominates"
    STRICTLY_DOMINATES = "strictly-dominates"
    DOMINATED = "dominated"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True, eq=False)
class Game:
    """A finite SSG with leader A and follower B."""

    transition: np.ndarray
    reward_leader: np.ndarray
    reward_follower: np.ndarray
    gamma_leader: float
    gamma_follower: float
    initial_distribution: np.ndarray

    def __post_init__(self):
        for name in ("transition", "reward_leader", "reward_follower", "initial_distribution"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma_leader", float(self.gamma_leader))
        object.__setattr__(self, "gamma_follower", float(self.gamma_follower))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_leader_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_follower_actions(self) -> int:
        return self.transition.shape[2]

    def reward(self, player: str) -> np.ndarray:
        return self.reward_leader if _player(player) == "A" else self.reward_follower

    def gamma(self, player: str) -> float:
        return self.gamma_leader if _player(player) == "A" else self.gamma_follower

    def value_bound(self, player: str) -> float:
        """max|r| / (1 - gamma) for the given player."""
        return float(np.max(np.abs(self.reward(player)), initial=0.0)) / (1.0 - self.gamma(player))

    def replace(self, **changes) -> "Game":
        fields = dict(
            transition=self.transition,
            reward_leader=self.reward_leader,
            reward_follower=self.reward_follower,
            gamma_leader=self.gamma_leader,
            gamma_follower=self.gamma_follower,
            initial_distribution=self.initial_distribution,
        )
        fields.update(changes)
        return Game(**fields)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_leader_actions": self.num_leader_actions,
            "num_follower_actions": self.num_follower_actions,
            "transition": self.transition.tolist(),
            "reward_leader": self.reward_leader.tolist(),
            "reward_follower": self.reward_follower.tolist(),
            "gamma_leader": self.gamma_leader,
            "gamma_follower": self.gamma_follower,
            "initial_distribution": self.initial_distribution.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, renormalize: bool = False) -> "Game":
        try:
            game = cls(
                transition=data["transition"],
                reward_leader=data["reward_leader"],
                reward_follower=data["reward_follower"],
                gamma_leader=data["gamma_leader"],
                gamma_follower=data["gamma_follower"],
                initial_distribution=data["initial_distribution"],
            )
        except KeyError as exc:
            raise GameError(f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise GameError(f"malformed game: {exc}") from None
        declared = (data.get("num_states"), data.get("num_leader_actions"), data.get("num_follower_actions"))
        if game.transition.ndim == 4 and declared != game.transition.shape[:3]:
            raise GameError(f"declared sizes {declared} do not match transition shape {game.transition.shape}")
        if renormalize:
            game = _renormalized(game)
        problems = validate_game(game)
        if problems:
            raise GameError("; ".join(problems))
        return game


def _player(player: str) -> str:
    p = str(player).upper()
    if p not in ("A", "B"):
        raise GameError(f"player must be 'A' or 'B', got {player!r}")
    return p


def _renormalized(game: Game) -> Game:
    t = np.clip(game.transition, 0.0, None)
    rho = np.clip(game.initial_distribution, 0.0, None)
    return game.replace(
        transition=t / t.sum(axis=-1, keepdims=True),
        initial_distribution=rho / rho.sum(),
    )


def validate_game(game: Game) -> list[str]:
    """List every violated invariant; an empty list means the game is valid."""
    out = []
    t = game.transition
    if t.ndim != 4 or min(t.shape, default=0) < 1:
        return [f"transition: expected a non-empty [s][a][b][s'] tensor, got shape {t.shape}"]
    S, A, B, S2 = t.shape
    if S2 != S:
        out.append(f"transition: next-state axis has length {S2}, expected {S}")
    for name in ("reward_leader", "reward_follower"):
        r = getattr(game, name)
        if r.shape != (S, A, B):
            out.append(f"{name}: shape {r.shape}, expected {(S, A, B)}")
        elif not np.all(np.isfinite(r)):
            for idx in zip(*np.nonzero(~np.isfinite(r))):
                out.append(f"{name}{list(map(int, idx))}: not finite")
    if not np.all(np.isfinite(t)):
        out.append("transition: contains non-finite entries")
    else:
        for idx in zip(*np.nonzero(t < 0)):
            out.append(f"transition{list(map(int, idx))}: negative probability")
        sums = t.sum(axis=-1)
        for idx in zip(*np.nonzero(np.abs(sums - 1.0) > PROB_TOL)):
            s, a, b = map(int, idx)
            out.append(f"transition[{s}][{a}][{b}]: sums to {sums[s, a, b]!r}, expected 1")
    for name, g in (("gamma_leader", game.gamma_leader), ("gamma_follower", game.gamma_follower)):
        if not (0.0 <= g < 1.0):
            out.append(f"{name}: {g!r} outside [0, 1)")
    rho = game.initial_distribution
    if rho.shape != (S,):
        out.append(f"initial_distribution: shape {rho.shape}, expected {(S,)}")
    elif not np.all(np.isfinite(rho)) or np.any(rho < 0):
        out.append("initial_distribution: entries must be finite and non-negative")
    elif abs(rho.sum() - 1.0) > PROB_TOL:
        out.append(f"initial_distribution: sums to {rho.sum()!r}, expected 1")
    return out


def check_leader_policy(game: Game, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (game.num_states, game.num_leader_actions):
        raise GameError(f"leader policy shape {f.shape}, expected {(game.num_states, game.num_leader_actions)}")
    if not np.all(np.isfinite(f)) or np.any(f < 0) or np.any(np.abs(f.sum(axis=1) - 1.0) > PROB_TOL):
        raise GameError("leader policy rows must be probability distributions")
    return f


def check_follower_policy(game: Game, g) -> np.ndarray:
    g = np.asarray(g)
    if g.shape != (game.num_states,) or not np.issubdtype(g.dtype, np.integer):
        raise GameError(f"follower policy must be {game.num_states} integer actions")
    if np.any(g < 0) or np.any(g >= game.num_follower_actions):
        raise GameError("follower action index out of range")
    return g.astype(np.int64)


def _check_index(n: int, i: int, what: str) -> int:
    if not (0 <= int(i) < n):
        raise IndexError(f"{what} index {i} out of range [0, {n})")
    return int(i)


def marginal_reward(game: Game, player: str, s: int, f_s, b: int) -> float:
    """Leader-mixed reward: sum_a f_s(a) * r_player(s, a, b)."""
    r = game.reward(player)
    s = _check_index(game.num_states, s, "state")
    b = _check_index(game.num_follower_actions, b, "follower action")
    return float(np.dot(np.asarray(f_s, dtype=np.float64), r[s, :, b]))


def marginal_transition(game: Game, s: int, f_s, b: int) -> np.ndarray:
    s = _check_index(game.num_states, s, "state")
    b = _check_index(game.num_follower_actions, b, "follower action")
    return np.asarray(f_s, dtype=np.float64) @ game.transition[s, :, b, :]


def compare(v, w, eta: float = ETA) -> Dominance:
    """Classify the dominance relation of value vector ``v`` against ``w``."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {w.shape}")
    d = v - w
    if np.all(np.abs(d) <= eta):
        return Dominance.EQUAL
    if np.all(d >= -eta):
        return Dominance.STRICTLY_DOMINATES
    if np.all(d <= eta):
        return Dominance.DOMINATED
    return Dominance.INCOMPARABLE


def weakly_dominates(v, w, eta: float = ETA) -> bool:
    return compare(v, w, eta) in (Dominance.EQUAL, Dominance.STRICTLY_DOMINATES, Dominance.WEAKLY_DOMINATES)


def make_example_game(x: float, y: float, gamma_A: float, gamma_B: float, rho=(0.5, 0.5)) -> Game:
    """Two-state game with no stationary Stackelberg equilibrium.

    At each state (a1, b1) self-loops paying (1, 0); (a1, b2) moves to the
    other state paying (0, x); (a2, *) moves to the other state paying (0, -y).
    """
    if not (x > 0 and y > 0):
        raise GameError(f"x and y must be positive, got x={x!r}, y={y!r}")
    for g in (gamma_A, gamma_B):
        if not (0.0 <= g < 1.0):
            raise GameError(f"discount {g!r} outside [0, 1)")
    T = np.zeros((2, 2, 2, 2))
    rA = np.zeros((2, 2, 2))
    rB = np.zeros((2, 2, 2))
    for s in range(2):
        other = 1 - s
        T[s, 0, 0, s] = 1.0
        rA[s, 0, 0] = 1.0
        T[s, 0, 1, other] = 1.0
        rB[s, 0, 1] = x
        T[s, 1, :, other] = 1.0
        rB[s, 1, :] = -y
    game = Game(T, rA, rB, gamma_A, gamma_B, np.asarray(rho, dtype=np.float64))
    problems = validate_game(game)
    if problems:
        raise GameError("; ".join(problems))
    return game


def random_game(
    rng: np.random.Generator,
    num_states: int,
    num_leader_actions: int,
    num_follower_actions: int,
    gamma_A: float = 0.9,
    gamma_B: float = 0.9,
    reward_range: tuple[float, float] = (-1.0, 1.0),
    cooperative: bool = False,
    lattice: int = 20,
) -> Game:
    """Seeded random game.

    Transition rows are Dirichlet(1) draws snapped to the ``1/lattice`` grid by
    a multinomial draw, so every row is an exact small-denominator distribution.
    """
    S, A, B = num_states, num_leader_actions, num_follower_actions
    shape = (S, A, B)
    counts = np.empty(shape + (S,))
    for idx in np.ndindex(shape):
        counts[idx] = rng.multinomial(lattice, rng.dirichlet(np.ones(S)))
    T = counts / lattice
    lo, hi = reward_range
    rA = rng.uniform(lo, hi, size=shape)
    rB = rA.copy() if cooperative else rng.uniform(lo, hi, size=shape)
    rho = np.full(S, 1.0 / S)
    return Game(T, rA, rB, gamma_A, gamma_B, rho)


def load_game(path, renormalize: bool = False) -> Game:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GameError(f"cannot read game file {path}: {exc}") from None
    return Game.from_dict(data, renormalize=renormalize)


def dump_game(game: Game, path) -> None:
    Path(path).write_text(json.dumps(game.to_dict(), indent=1) + "\n")


def uniform_policy(game: Game) -> np.ndarray:
    return np.full((game.num_states, game.num_leader_actions), 1.0 / game.num_leader_actions)


def deterministic_policy(game: Game, actions) -> np.ndarray:
    f = np.zeros((game.num_states, game.num_leader_actions))
    f[np.arange(game.num_states), np.asarray(actions)] = 1.0
    return f


def example_policy(p: float, q: float) -> np.ndarray:
    """Leader policy of the example game with f_{s1}(a1) = p, f_{s2}(a1) = q."""
    return np.array([[p, 1.0 - p], [q, 1.0 - q]])
