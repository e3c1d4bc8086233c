"""The one-step Stackelberg operator on value pairs and its fixed points.

Each application solves, state by state, the normal-form Stackelberg game
whose payoffs are the current Q values ``q_i(s, f_s, b)``. The leader's
problem is a maximization of an affine function over the follower-response
regions of the simplex, done exactly by vertex enumeration.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .game import Game
from .mdp import evaluate_batch

log = logging.getLogger(__name__)

FPE_TIE_RULES = ("optimistic", "pessimistic", "lowest")
DEFAULT_TIE_BREAK = "optimistic"
REGION_TOL = 1e-9
VERTEX_SYSTEM_CAP = 20000
CYCLE_MIN_STEP = 100.0


@dataclass(frozen=True)
class ValuePair:
    v_A: np.ndarray
    v_B: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.v_A, dtype=np.float64)
        b = np.asarray(self.v_B, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("value pair components must be equal-length vectors")
        object.__setattr__(self, "v_A", a)
        object.__setattr__(self, "v_B", b)

    @classmethod
    def zeros(cls, n: int) -> "ValuePair":
        return cls(np.zeros(n), np.zeros(n))

    def distance(self, other: "ValuePair") -> float:
        return float(max(np.max(np.abs(self.v_A - other.v_A)), np.max(np.abs(self.v_B - other.v_B))))


@dataclass(frozen=True)
class OneStepSolution:
    leader_dist: np.ndarray
    follower_action: int
    payoffs: tuple[float, float]
    boundary_tie: bool


def stage_payoffs(game: Game, s: int, v: ValuePair):
    """Q matrices ``(qA, qB)`` of shape (A, B) for the stage game at ``s``."""
    nxt = game.transition[s]
    qA = game.reward_leader[s] + game.gamma_leader * nxt @ v.v_A
    qB = game.reward_follower[s] + game.gamma_follower * nxt @ v.v_B
    return qA, qB


def _pick_response(x, qA, qB, tie_break: str, tol: float):
    """Follower's response at leader mix ``x`` and the tied set size."""
    fb = x @ qB
    tied = np.nonzero(fb >= fb.max() - tol)[0]
    if len(tied) == 1 or tie_break == "lowest":
        return int(tied[0]), len(tied)
    la = x @ qA[:, tied]
    if tie_break == "optimistic":
        pick = np.nonzero(la >= la.max() - tol)[0][0]
    else:
        pick = np.nonzero(la <= la.min() + tol)[0][0]
    return int(tied[pick]), len(tied)


def one_step_follower_response(
    game: Game, s: int, f_s, v_B, tie_break: str = DEFAULT_TIE_BREAK, v_A=None
) -> int:
    """argmax_b r_B(s, f_s, b) + gamma_B E[v_B(s')]; cross-action ties use ``tie_break``
    on the leader's one-step value (with ``v_A`` as continuation, zero if omitted)."""
    v_A = np.zeros(game.num_states) if v_A is None else v_A
    qA, qB = stage_payoffs(game, s, ValuePair(v_A, v_B))
    return _pick_response(np.asarray(f_s, dtype=np.float64), qA, qB, tie_break, 1e-10)[0]


@lru_cache(maxsize=None)
def _active_sets(num_rows: int, size: int) -> np.ndarray:
    combos = list(itertools.combinations(range(num_rows), size))
    return np.array(combos, dtype=np.int64).reshape(len(combos), size)


def _region_vertices(qB: np.ndarray) -> list[np.ndarray]:
    """Vertices of every closed follower-response region D_b of the simplex."""
    A, B = qB.shape
    subsets = _active_sets(A + B - 1, A - 1)
    out = []
    for b in range(B):
        cuts = np.array([qB[:, b] - qB[:, c] for c in range(B) if c != b]).reshape(-1, A)
        ineq = np.vstack([np.eye(A), cuts])                    # ineq @ x >= 0
        scale = np.maximum(1.0, np.abs(ineq).max(axis=1))
        M = np.empty((len(subsets), A, A))
        M[:, : A - 1, :] = ineq[subsets]
        M[:, A - 1, :] = 1.0
        rhs = np.zeros(A)
        rhs[A - 1] = 1.0
        ok = np.linalg.cond(M) < 1e12
        if not ok.any():
            out.append(np.zeros((0, A)))
            continue
        X = np.linalg.solve(M[ok], np.broadcast_to(rhs, (int(ok.sum()), A))[..., None])[..., 0]
        feas = np.all(X @ ineq.T >= -REGION_TOL * scale, axis=1)
        X = np.clip(X[feas], 0.0, None)
        out.append(X / X.sum(axis=1, keepdims=True))
    return out


def _region_lp(qA: np.ndarray, qB: np.ndarray) -> list[np.ndarray]:
    # Large action sets: one LP per region instead of enumerating vertices.
    A, B = qB.shape
    out = []
    for b in range(B):
        cuts = np.array([qB[:, c] - qB[:, b] for c in range(B) if c != b]).reshape(-1, A)
        res = linprog(
            -qA[:, b], A_ub=cuts if len(cuts) else None, b_ub=np.zeros(len(cuts)) if len(cuts) else None,
            A_eq=np.ones((1, A)), b_eq=[1.0], bounds=[(0, None)] * A, method="highs",
        )
        out.append(np.clip(res.x, 0.0, None)[None] / res.x.clip(0).sum() if res.status == 0 else np.zeros((0, A)))
    return out


def one_step_leader_solve(game: Game, s: int, v: ValuePair, tie_break: str = DEFAULT_TIE_BREAK) -> OneStepSolution:
    """Stackelberg solution of the stage game at ``s``.

    Regions are taken closed, so the maximum always exists; at a boundary the
    follower's choice among tied actions follows ``tie_break`` (optimistic:
    best for the leader; pessimistic: worst; lowest: smallest index).
    """
    if tie_break not in FPE_TIE_RULES:
        raise ValueError(f"tie_break must be one of {FPE_TIE_RULES}, got {tie_break!r}")
    qA, qB = stage_payoffs(game, s, v)
    A, B = qB.shape
    if B * len(_active_sets(A + B - 1, A - 1)) <= VERTEX_SYSTEM_CAP:
        regions = _region_vertices(qB)
    else:
        log.debug("stage game %dx%d: solving regions by LP", A, B)
        regions = _region_lp(qA, qB)
    best = None
    for X in regions:
        for x in X:
            b, ntied = _pick_response(x, qA, qB, tie_break, REGION_TOL)
            val = float(x @ qA[:, b])
            if best is None or val > best[0] + 1e-12:
                best = (val, x, b, ntied)
    if best is None:
        raise RuntimeError(f"no follower-response region found at state {s}")
    val, x, b, ntied = best
    return OneStepSolution(x, b, (val, float(x @ qB[:, b])), ntied > 1)


def apply_operator(game: Game, v: ValuePair, tie_break: str = DEFAULT_TIE_BREAK):
    """One application of the operator: ``(T v, f_bar, g_bar, boundary_ties)``."""
    S = game.num_states
    f = np.zeros((S, game.num_leader_actions))
    g = np.zeros(S, dtype=np.int64)
    va = np.zeros(S)
    vb = np.zeros(S)
    ties = 0
    for s in range(S):
        sol = one_step_leader_solve(game, s, v, tie_break)
        f[s] = sol.leader_dist
        g[s] = sol.follower_action
        va[s], vb[s] = sol.payoffs
        ties += sol.boundary_tie
    return ValuePair(va, vb), f, g, ties


@dataclass
class FixedPointReport:
    status: str
    iterations: int
    values: ValuePair
    history: list[float] = field(default_factory=list)
    leader_policy: np.ndarray | None = None
    follower_policy: np.ndarray | None = None
    boundary_ties: int = 0
    cycle_lag: int | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "values": {"v_A": self.values.v_A.tolist(), "v_B": self.values.v_B.tolist()},
            "leader_policy": None if self.leader_policy is None else self.leader_policy.tolist(),
            "follower_policy": None if self.follower_policy is None else self.follower_policy.tolist(),
            "boundary_ties": self.boundary_ties,
            "cycle_lag": self.cycle_lag,
            "history": self.history,
        }


def iterate_to_fixed_point(
    game: Game,
    v0: ValuePair | None = None,
    tol: float = 1e-8,
    max_iters: int = 10_000,
    window: int = 64,
    tie_break: str = DEFAULT_TIE_BREAK,
) -> FixedPointReport:
    """Apply the operator until ``||Tv - v||_inf <= tol``.

    Stops early with ``cycle-detected`` when the new iterate returns within
    ``tol`` of one of the previous ``window`` iterates while still moving by
    more than ``CYCLE_MIN_STEP * tol`` per application; a damped oscillation
    settling onto a fixed point also revisits old iterates and is not a cycle.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = ValuePair.zeros(game.num_states) if v0 is None else v0
    recent: deque[ValuePair] = deque(maxlen=window)
    history = []
    ties = 0
    for k in range(1, max_iters + 1):
        w, f, g, t = apply_operator(game, v, tie_break)
        ties += t
        step = w.distance(v)
        history.append(step)
        if step <= tol:
            return FixedPointReport("converged", k, w, history, f, g, ties)
        for lag, old in enumerate(reversed(recent) if step > CYCLE_MIN_STEP * tol else (), start=2):
            if w.distance(old) <= tol:
                return FixedPointReport("cycle-detected", k, w, history, f, g, ties, cycle_lag=lag)
        recent.append(v)
        v = w
    return FixedPointReport("max-iters", max_iters, v, history, f, g, ties)


def frozen_response_batch(game: Game, F: np.ndarray, v: ValuePair, tie_break: str = DEFAULT_TIE_BREAK) -> np.ndarray:
    """Greedy follower policies against a frozen continuation ``v.v_B`` for every policy in ``F``."""
    qA = game.reward_leader + game.gamma_leader * game.transition @ v.v_A     # (S, A, B)
    qB = game.reward_follower + game.gamma_follower * game.transition @ v.v_B
    la = np.einsum("nsa,sab->nsb", F, qA)
    fb = np.einsum("nsa,sab->nsb", F, qB)
    tied = fb >= fb.max(axis=2, keepdims=True) - REGION_TOL
    if tie_break == "lowest":
        return np.argmax(tied, axis=2)
    score = la if tie_break == "optimistic" else -la
    score = np.where(tied, score, -np.inf)
    return np.argmax(score >= score.max(axis=2, keepdims=True) - REGION_TOL, axis=2)


@dataclass
class FixedPointCheck:
    follower_excess: float      # max over probes g of V_B^{f_bar g} - V_B
    follower_equality_gap: float  # max |V_B^{f_bar g_bar} - V_B|
    leader_excess: float        # max over probes f of V_A^{f R_B(f, V_B)} - V_A
    leader_equality_gap: float  # max |V_A^{f_bar R_B(f_bar, V_B)} - V_A|
    num_leader_probes: int
    num_follower_probes: int

    @property
    def max_violation(self) -> float:
        return max(self.follower_excess, self.follower_equality_gap, self.leader_excess, self.leader_equality_gap, 0.0)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["max_violation"] = self.max_violation
        return d


def verify_fixed_point_characterization(
    game: Game,
    v: ValuePair,
    f_bar,
    probe_leader_policies,
    probe_follower_policies,
    tie_break: str = DEFAULT_TIE_BREAK,
) -> FixedPointCheck:
    """Check the fixed-point characterization at a converged ``v``.

    Follower side: ``V_B`` weakly dominates the value of every probed follower
    policy against ``f_bar`` and is attained by the greedy follower. Leader
    side: ``V_A`` weakly dominates the leader value of every probed ``f``
    paired with the frozen-continuation greedy follower, with equality at
    ``f_bar``.
    """
    f_bar = np.asarray(f_bar, dtype=np.float64)
    S = game.num_states
    g_bar = frozen_response_batch(game, f_bar[None], v, tie_break)[0]

    Gp = np.asarray(probe_follower_policies, dtype=np.int64).reshape(-1, S)
    Fb = np.broadcast_to(f_bar, (len(Gp),) + f_bar.shape)
    vb_probe = evaluate_batch(game, "B", Fb, Gp) if len(Gp) else np.zeros((0, S))
    vb_bar = evaluate_batch(game, "B", f_bar[None], g_bar[None])[0]

    Fp = np.asarray(probe_leader_policies, dtype=np.float64).reshape(-1, S, game.num_leader_actions)
    va_probe = evaluate_batch(game, "A", Fp, frozen_response_batch(game, Fp, v, tie_break)) if len(Fp) else np.zeros((0, S))
    va_bar = evaluate_batch(game, "A", f_bar[None], g_bar[None])[0]

    return FixedPointCheck(
        follower_excess=float(np.max(vb_probe - v.v_B, initial=-np.inf)),
        follower_equality_gap=float(np.max(np.abs(vb_bar - v.v_B))),
        leader_excess=float(np.max(va_probe - v.v_A, initial=-np.inf)),
        leader_equality_gap=float(np.max(np.abs(va_bar - v.v_A))),
        num_leader_probes=len(Fp),
        num_follower_probes=len(Gp),
    )


def all_follower_policies(game: Game) -> np.ndarray:
    B, S = game.num_follower_actions, game.num_states
    return np.array(list(itertools.product(range(B), repeat=S)), dtype=np.int64).reshape(-1, S)
