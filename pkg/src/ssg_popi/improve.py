"""Policy-improvement tests and Pareto-optimality certificates.

Everything here compares the leader Q function of a candidate policy ``f``,
taken against the dagger value of a reference policy, with that reference
value. The universal statements behind the necessary and sufficient
conditions range over all leader policies; the checkers below range over an
explicit finite probe set and name their verdicts accordingly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .game import ETA, Dominance, Game, GameError, compare
from .mdp import (
    DEFAULT_TIE_BREAK,
    best_response_batch,
    dagger_values_batch,
    follower_best_response,
    induced_batch,
    induced_chain,
    leader_dagger_value,
    leader_q,
)

POSITIVE_MIX = 1e-6


@dataclass(frozen=True)
class Scalarization:
    """Weighted sum with strictly positive weights summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise GameError(f"scalarization weights must be positive and sum to 1, got {w.tolist()}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, w) -> "Scalarization":
        """Normalize ``w``; zero entries are mixed with a 1e-6 uniform component."""
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1 or len(w) == 0 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise GameError(f"weights must be non-negative with positive sum, got {w.tolist()}")
        w = w / w.sum()
        if np.any(w <= 0):
            w = (1 - POSITIVE_MIX) * w + POSITIVE_MIX / len(w)
            w = w / w.sum()
        return cls(w)

    def __call__(self, v) -> float:
        return scalarize(self, v)


def default_scalarization(game: Game) -> Scalarization:
    """Weights equal to the initial distribution (made strictly positive)."""
    return Scalarization.from_weights(game.initial_distribution)


def scalarize(L: Scalarization, v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != L.weights.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {L.weights.shape}")
    return float(L.weights @ v)


@dataclass
class ImprovementCertificate:
    q_values: np.ndarray
    reference_values: np.ndarray
    relation: Dominance
    delta: float
    sufficient_gap_state: int | None

    def to_dict(self) -> dict:
        return {
            "q_values": self.q_values.tolist(),
            "reference_values": self.reference_values.tolist(),
            "relation": self.relation.value,
            "delta": self.delta,
            "sufficient_gap_state": self.sufficient_gap_state,
        }


def _delta_from(game: Game, q, v_ref, P) -> float:
    return float(np.max(P @ (q - v_ref)))


def delta(game: Game, f_t_values, f, tie_break: str = DEFAULT_TIE_BREAK) -> float:
    """max_s E_{s' ~ p(.|s, f(s), g(s))}[Q(s', f) - V(s')] with g the best response to f."""
    v = np.asarray(f_t_values, dtype=np.float64)
    g = follower_best_response(game, f, tie_break).policy
    q = leader_q(game, v, f, g=g)
    _, P = induced_chain(game, "A", f, g)
    return _delta_from(game, q, v, P)


def _gap_state(game: Game, q, v, d: float, eta: float) -> int | None:
    thresh = v - game.gamma_leader / (1.0 - game.gamma_leader) * d - eta
    hits = np.nonzero(q < thresh)[0]
    return int(hits[0]) if len(hits) else None


def certificate(game: Game, f_t_values, f, tie_break: str = DEFAULT_TIE_BREAK, eta: float = ETA):
    v = np.asarray(f_t_values, dtype=np.float64)
    g = follower_best_response(game, f, tie_break).policy
    q = leader_q(game, v, f, g=g)
    _, P = induced_chain(game, "A", f, g)
    d = _delta_from(game, q, v, P)
    return ImprovementCertificate(q, v, compare(q, v, eta), d, _gap_state(game, q, v, d, eta))


def in_improving_set(game: Game, f_t_values, f, tie_break: str = DEFAULT_TIE_BREAK, eta: float = ETA):
    """Whether Q(., f) weakly dominates the reference value, with its certificate."""
    cert = certificate(game, f_t_values, f, tie_break, eta)
    ok = bool(np.all(cert.q_values >= cert.reference_values - eta))
    return ok, cert


class NecessaryVerdict(enum.Enum):
    FAILS = "FAILS"
    INCONCLUSIVE_PASS = "INCONCLUSIVE-PASS"


class SufficientVerdict(enum.Enum):
    CERTIFIED_OVER_PROBES = "CERTIFIED-over-probes"
    NOT_CERTIFIED = "NOT-CERTIFIED"


@dataclass
class ConditionReport:
    verdict: enum.Enum
    num_probes: int
    offenders: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "num_probes": self.num_probes, "offenders": self.offenders}


def _as_batch(game: Game, candidates) -> np.ndarray:
    F = np.asarray(candidates, dtype=np.float64)
    if F.size == 0:
        return np.zeros((0, game.num_states, game.num_leader_actions))
    return F.reshape(-1, game.num_states, game.num_leader_actions)


def check_necessary_condition(
    game: Game, f_prime, candidates, tie_break: str = DEFAULT_TIE_BREAK, eta: float = ETA
) -> ConditionReport:
    """FAILS when some probe improves on ``f_prime`` (Q weakly dominates V and its
    dagger value strictly dominates); otherwise INCONCLUSIVE-PASS over the probes."""
    F = _as_batch(game, candidates)
    if len(F) == 0:
        return ConditionReport(NecessaryVerdict.INCONCLUSIVE_PASS, 0)
    v, _ = leader_dagger_value(game, f_prime, tie_break)
    VA, G = dagger_values_batch(game, F, tie_break)
    r, P = induced_batch(game, "A", F, G)
    Q = r + game.gamma_leader * P @ v
    offenders = [
        n for n in range(len(F))
        if np.all(Q[n] >= v - eta) and compare(VA[n], v, eta) is Dominance.STRICTLY_DOMINATES
    ]
    verdict = NecessaryVerdict.FAILS if offenders else NecessaryVerdict.INCONCLUSIVE_PASS
    return ConditionReport(verdict, len(F), offenders)


def check_sufficient_condition(
    game: Game, f_prime, candidates, tie_break: str = DEFAULT_TIE_BREAK, eta: float = ETA
) -> ConditionReport:
    """CERTIFIED-over-probes when every probe satisfies (i) Q equals V or
    (ii) Q(s) < V(s) - gamma_A/(1-gamma_A) * delta at some state.

    Only a probe set covering every leader policy would certify Pareto
    optimality; over a grid this is evidence, not proof.
    """
    F = _as_batch(game, candidates)
    v, _ = leader_dagger_value(game, f_prime, tie_break)
    if len(F) == 0:
        return ConditionReport(SufficientVerdict.CERTIFIED_OVER_PROBES, 0)
    G = best_response_batch(game, F, tie_break)[0]
    r, P = induced_batch(game, "A", F, G)
    Q = r + game.gamma_leader * P @ v
    D = np.max(np.einsum("nst,nt->ns", P, Q - v), axis=1)
    coef = game.gamma_leader / (1.0 - game.gamma_leader)
    equal = np.all(np.abs(Q - v) <= eta, axis=1)
    gap = np.any(Q < v - coef * D[:, None] - eta, axis=1)
    offenders = np.nonzero(~(equal | gap))[0].tolist()
    verdict = SufficientVerdict.NOT_CERTIFIED if offenders else SufficientVerdict.CERTIFIED_OVER_PROBES
    return ConditionReport(verdict, len(F), offenders)
