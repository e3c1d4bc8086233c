"""Pareto-optimal policy iteration for the leader.

Each iteration evaluates the current leader policy under the best-response
follower, collects candidate policies whose leader Q (against the current
value) weakly dominates that value and strictly improves it somewhere, and
moves to a candidate whose scalarized gain is within a factor ``1 - epsilon``
of the best gain seen. Dominating the current value in Q makes every accepted step
monotone in all states at once; this is checked at runtime.

Candidates come from a lattice of leader policies (``ideal-grid``) or from a
per-region search (``practical-split``): the lattice is split by the
follower's best response, and inside each region the leader Q is affine in
the policy, so a descent finds a feasible point and a Pareto ascent pushes it
up.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .game import ETA, Dominance, Game, GameError, check_leader_policy, compare, uniform_policy
from .improve import Scalarization, check_sufficient_condition, default_scalarization
from .mdp import (
    DEFAULT_TIE_BREAK,
    BestResponseResult,
    best_response_batch,
    evaluate_pair,
    follower_best_response,
    induced_batch,
)
from .oracle import DEFAULT_CAP, grid_policies

log = logging.getLogger(__name__)

MODES = ("ideal-grid", "practical-split", "backtracking")
SCANS = ("all-regions", "first-improver")


class MonotonicityError(RuntimeError):
    """An accepted step failed to improve the leader value at every state."""


@dataclass
class SearchConfig:
    resolution: int = 21
    ascent_step: float = 0.1
    shrink: float = 0.5
    max_ascent_steps: int = 50
    max_descent_steps: int = 50
    pool_size: int = 256
    min_step: float = 1e-9


@dataclass
class PopiConfig:
    weights: tuple[float, ...] | None = None   # None: the game's initial distribution
    epsilon: float = 0.1
    max_iters: int = 100
    improvement_tol: float = 2e-9
    search: SearchConfig = field(default_factory=SearchConfig)
    mode: str = "practical-split"
    scan: str = "all-regions"
    seed: int = 0
    tie_break: str = DEFAULT_TIE_BREAK
    eta: float = ETA

    def __post_init__(self):
        if isinstance(self.search, dict):
            self.search = SearchConfig(**self.search)
        if not (0.0 <= self.epsilon < 1.0):
            raise GameError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if self.max_iters < 1:
            raise GameError("max_iters must be >= 1")
        if min(self.improvement_tol, self.eta, self.search.ascent_step, self.search.min_step) <= 0:
            raise GameError("tolerances and step sizes must be positive")
        if not (0.0 < self.search.shrink < 1.0):
            raise GameError("shrink factor must be in (0, 1)")
        if self.search.resolution < 2:
            raise GameError("grid resolution must be >= 2")
        if self.mode not in MODES:
            raise GameError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scan not in SCANS:
            raise GameError(f"scan must be one of {SCANS}, got {self.scan!r}")

    def scalarization(self, game: Game) -> Scalarization:
        if self.weights is None:
            return default_scalarization(game)
        if len(self.weights) != game.num_states:
            raise GameError(f"expected {game.num_states} weights, got {len(self.weights)}")
        return Scalarization.from_weights(self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = None if self.weights is None else list(self.weights)
        return d


# --------------------------------------------------------------------------- probes


@dataclass
class ProbeSet:
    """Lattice policies with their (value-independent) follower best responses."""

    policies: np.ndarray   # (N, S, A)
    responses: np.ndarray  # (N, S)
    reward: np.ndarray     # (N, S)    r_A(s, f(s), g(s))
    kernel: np.ndarray     # (N, S, S) p(s'|s, f(s), g(s))

    @classmethod
    def build(cls, game: Game, policies: np.ndarray, tie_break: str = DEFAULT_TIE_BREAK) -> "ProbeSet":
        policies = np.ascontiguousarray(policies, dtype=np.float64)
        G = best_response_batch(game, policies, tie_break)[0]
        r, P = induced_batch(game, "A", policies, G)
        return cls(policies, G, r, P)

    @classmethod
    def grid(cls, game: Game, resolution: int, tie_break: str = DEFAULT_TIE_BREAK, cap: int = DEFAULT_CAP):
        return cls.build(game, grid_policies(game, resolution, cap=cap), tie_break)

    def q(self, gamma_A: float, v: np.ndarray) -> np.ndarray:
        return self.reward + gamma_A * (self.kernel @ v)

    def subset(self, idx) -> "ProbeSet":
        return ProbeSet(self.policies[idx], self.responses[idx], self.reward[idx], self.kernel[idx])

    def with_policy(self, game: Game, f: np.ndarray, tie_break: str) -> "ProbeSet":
        extra = ProbeSet.build(game, f[None], tie_break)
        return ProbeSet(
            np.concatenate([self.policies, extra.policies]),
            np.concatenate([self.responses, extra.responses]),
            np.concatenate([self.reward, extra.reward]),
            np.concatenate([self.kernel, extra.kernel]),
        )

    def __len__(self):
        return len(self.policies)


@dataclass
class Region:
    follower_policy: np.ndarray
    probes: ProbeSet
    index: int


def split_regions(game: Game, probe_policies, tie_break: str = DEFAULT_TIE_BREAK) -> list[Region]:
    """Group probes by their exact follower best response, in lexicographic order of the response."""
    probes = probe_policies if isinstance(probe_policies, ProbeSet) else ProbeSet.build(
        game, np.asarray(probe_policies, dtype=np.float64).reshape(-1, game.num_states, game.num_leader_actions),
        tie_break)
    if len(probes) == 0:
        raise GameError("probe set is empty")
    keys, inverse = np.unique(probes.responses, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    return [Region(keys[k], probes.subset(np.nonzero(inverse == k)[0]), k) for k in range(len(keys))]


# --------------------------------------------------------------------------- region search


def _region_coefficients(game: Game, v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """c[s, a] such that Q(s, f) = f[s] . c[s] for every f whose best response is g."""
    s = np.arange(game.num_states)
    return game.reward_leader[s, :, g] + game.gamma_leader * game.transition[s, :, g, :] @ v


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``y`` onto the probability simplex."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    u = -np.sort(-y, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, y.shape[1] + 1)
    rho = np.count_nonzero(u - css / k > 0, axis=1)
    theta = css[np.arange(len(y)), rho - 1] / rho
    return np.maximum(y - theta[:, None], 0.0)


def _in_region(game: Game, f: np.ndarray, g: np.ndarray, tie_break: str) -> bool:
    return bool(np.array_equal(best_response_batch(game, f[None], tie_break)[0][0], g))


def feasibility_search(
    game: Game,
    v_t,
    region: Region,
    L: Scalarization | None = None,
    search: SearchConfig | None = None,
    tie_break: str = DEFAULT_TIE_BREAK,
    tol: float = ETA,
    strict_tol: float = 2 * ETA,
) -> np.ndarray | None:
    """Find f in the region with max_s (V(s) - Q(s, f)) <= tol, or None.

    Probes already meeting the bound are preferred, strict improvers first
    and then by scalarized gain. Otherwise projected subgradient steps on the
    worst state start from the probe with the smallest gap; steps that leave
    the region are halved.
    """
    search = search or SearchConfig()
    v = np.asarray(v_t, dtype=np.float64)
    w = (L or Scalarization.from_weights(np.ones(len(v)))).weights
    c = _region_coefficients(game, v, region.follower_policy)
    F = region.probes.policies
    Q = np.einsum("nsa,sa->ns", F, c)
    z = np.max(v - Q, axis=1)
    feasible = z <= tol
    if feasible.any():
        strict = feasible & (np.max(Q - v, axis=1) > strict_tol)
        pool = np.nonzero(strict if strict.any() else feasible)[0]
        gains = (Q[pool] - v) @ w
        return F[pool[int(np.argmax(gains))]].copy()

    f = F[int(np.argmin(z))].copy()
    zf = float(z.min())
    step = search.ascent_step
    for _ in range(search.max_descent_steps):
        if step < search.min_step:
            break
        s = int(np.argmax(v - np.sum(f * c, axis=1)))
        cand = f.copy()
        cand[s] = project_simplex(f[s] + step * (c[s] - c[s].mean()))[0]
        zc = float(np.max(v - np.sum(cand * c, axis=1)))
        if zc < zf and _in_region(game, cand, region.follower_policy, tie_break):
            f, zf = cand, zc
            if zf <= tol:
                return f
        else:
            step *= search.shrink
    return None


def _ascent_direction(f_s: np.ndarray, c_s: np.ndarray, tol: float = 1e-15) -> np.ndarray:
    """Maximize d . c_s over sum(d) = 0, |d| <= 1, d_a >= 0 where f_s(a) = 0.

    The constraint matrix is totally unimodular, so an optimum moves unit mass
    from the cheapest supported actions to the most valuable ones, pairwise.
    """
    d = np.zeros_like(c_s)
    up = list(np.argsort(-c_s, kind="stable"))
    down = [a for a in np.argsort(c_s, kind="stable") if f_s[a] > 0]
    used = set()
    i = j = 0
    while i < len(up) and j < len(down):
        a, b = int(up[i]), int(down[j])
        if a in used:
            i += 1
            continue
        if b in used:
            j += 1
            continue
        if a == b or c_s[a] <= c_s[b] + tol:
            break
        d[a], d[b] = 1.0, -1.0
        used.update((a, b))
        i += 1
        j += 1
    return d


def pareto_ascent(
    game: Game,
    v_t,
    f_start,
    region,
    L: Scalarization | None = None,
    search: SearchConfig | None = None,
    tie_break: str = DEFAULT_TIE_BREAK,
    eta: float = ETA,
) -> np.ndarray:
    """Move ``f_start`` along directions that never lower Q(s, .) at any state.

    Q is affine in the policy while the follower response stays ``region``;
    each state gets its best feasible direction, so the minimum directional
    derivative is maximal and the weighted one is too. A step is kept only if
    no state loses value, the scalarized Q rises and the follower response is
    unchanged. When only some states' moves break the response, those states
    are held fixed and the step is retried; otherwise the step is shrunk.
    """
    search = search or SearchConfig()
    g = region.follower_policy if isinstance(region, Region) else np.asarray(region)
    v = np.asarray(v_t, dtype=np.float64)
    w = (L or Scalarization.from_weights(np.ones(len(v)))).weights
    c = _region_coefficients(game, v, g)
    f = np.array(f_start, dtype=np.float64)
    q = np.sum(f * c, axis=1)
    step = search.ascent_step
    active = np.ones(len(f), dtype=bool)
    for _ in range(search.max_ascent_steps):
        if step < search.min_step:
            break
        D = np.array([_ascent_direction(f[s], c[s]) if active[s] else np.zeros_like(c[s]) for s in range(len(f))])
        if w @ np.sum(D * c, axis=1) <= eta:
            break
        cand = project_simplex(f + step * D)
        qc = np.sum(cand * c, axis=1)
        if not (np.all(qc >= q) and w @ qc > w @ q):
            step *= search.shrink
        elif _in_region(game, cand, g, tie_break):
            f, q = cand, qc
            active[:] = True
        else:
            # states whose own move already changes the follower's response sit out this step size
            moving = np.nonzero(np.any(D != 0, axis=1))[0]
            blocked = [s for s in moving if not _in_region(game, _with_row(f, s, cand[s]), g, tie_break)]
            if blocked and len(blocked) < len(moving):
                active[blocked] = False
            else:
                step *= search.shrink
                active[:] = True
    return f


def _with_row(f: np.ndarray, s: int, row: np.ndarray) -> np.ndarray:
    out = f.copy()
    out[s] = row
    return out


# --------------------------------------------------------------------------- iteration


@dataclass
class Candidate:
    policy: np.ndarray
    q_values: np.ndarray
    gain: float
    region: int | None
    source: str

    def log_entry(self) -> dict:
        return {"region": self.region, "source": self.source, "gain": self.gain, "q_values": self.q_values.tolist()}


@dataclass
class StepReport:
    values: np.ndarray
    terminal: bool
    candidates: list[Candidate]
    selectable: list[int]
    chosen: int | None
    num_regions: int

    def log_entry(self) -> dict:
        return {
            "terminal": self.terminal,
            "num_regions": self.num_regions,
            "chosen": self.chosen,
            "selectable": self.selectable,
            "candidates": [c.log_entry() for c in self.candidates],
        }


def _accept_mask(Q: np.ndarray, v: np.ndarray, game: Game, config: PopiConfig) -> np.ndarray:
    # slack (1 - gamma_A) * eta keeps the realized value within eta of monotone
    slack = (1.0 - game.gamma_leader) * config.eta
    strict = max(config.improvement_tol, 2 * config.eta)
    return np.all(Q >= v - slack, axis=-1) & (np.max(Q - v, axis=-1) > strict)


def popi_step(
    game: Game,
    f_t,
    config: PopiConfig,
    rng: np.random.Generator | None = None,
    probes: ProbeSet | None = None,
    v_t=None,
):
    """One improvement step; returns ``(f_next, StepReport)``.

    ``f_next`` is ``f_t`` itself when no candidate strictly improves.
    """
    f_t = check_leader_policy(game, f_t)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    L = config.scalarization(game)
    if probes is None:
        probes = ProbeSet.grid(game, config.search.resolution, config.tie_break)
    if v_t is None:
        g_t = follower_best_response(game, f_t, config.tie_break).policy
        v_t = evaluate_pair(game, "A", f_t, g_t)
    v = np.asarray(v_t, dtype=np.float64)
    gamma = game.gamma_leader
    candidates: list[Candidate] = []
    num_regions = 0

    if config.mode == "ideal-grid":
        Q = probes.q(gamma, v)
        for n in np.nonzero(_accept_mask(Q, v, game, config))[0]:
            candidates.append(Candidate(probes.policies[n].copy(), Q[n], float(L.weights @ (Q[n] - v)), None, "grid"))
    else:
        strict_tol = max(config.improvement_tol, 2 * config.eta)
        slack = (1.0 - gamma) * config.eta
        regions = split_regions(game, probes.with_policy(game, f_t, config.tie_break), config.tie_break)
        num_regions = len(regions)
        for k in rng.permutation(len(regions)):
            region = regions[k]
            f0 = feasibility_search(game, v, region, L, config.search, config.tie_break, slack, strict_tol)
            if f0 is None:
                continue
            f1 = pareto_ascent(game, v, f0, region, L, config.search, config.tie_break, config.eta)
            c = _region_coefficients(game, v, region.follower_policy)
            q1 = np.sum(f1 * c, axis=1)
            if _accept_mask(q1, v, game, config):
                candidates.append(Candidate(f1, q1, float(L.weights @ (q1 - v)), int(region.index), "ascent"))
                if config.scan == "first-improver":
                    break

    if not candidates:
        return f_t, StepReport(v, True, [], [], None, num_regions)
    gains = np.array([c.gain for c in candidates])
    best = gains.max()
    if best > 0:
        selectable = np.nonzero(gains >= (1.0 - config.epsilon) * best)[0]
    else:
        selectable = np.nonzero(gains >= best)[0]
    chosen = int(selectable[rng.integers(len(selectable))])
    report = StepReport(v, False, candidates, [int(i) for i in selectable], chosen, num_regions)
    return candidates[chosen].policy, report


@dataclass
class Iterate:
    policy: np.ndarray
    values: np.ndarray
    scalarized: float
    best_response: BestResponseResult
    parent: int | None

    def to_dict(self) -> dict:
        return {
            "parent": self.parent,
            "policy": self.policy.tolist(),
            "values": self.values.tolist(),
            "scalarized": self.scalarized,
            "follower_policy": self.best_response.policy.tolist(),
            "follower_values": self.best_response.follower_values.tolist(),
            "tie_margin": [None if not np.isfinite(m) else float(m) for m in self.best_response.tie_margin],
        }


@dataclass
class PopiTrace:
    iterates: list[Iterate]
    termination: str
    final: int
    candidate_log: list[dict]
    outputs: list[int] = field(default_factory=list)
    weights: np.ndarray | None = None

    @property
    def final_iterate(self) -> Iterate:
        return self.iterates[self.final]

    @property
    def final_values(self) -> np.ndarray:
        return self.final_iterate.values

    def edges(self):
        for i, it in enumerate(self.iterates):
            if it.parent is not None:
                yield it.parent, i

    def to_dict(self) -> dict:
        return {
            "termination": self.termination,
            "final": self.final,
            "outputs": self.outputs,
            "weights": None if self.weights is None else self.weights.tolist(),
            "iterates": [it.to_dict() for it in self.iterates],
            "candidate_log": self.candidate_log,
        }

    def to_csv(self) -> str:
        S = len(self.iterates[0].values)
        lines = ["iteration,parent,scalarized," + ",".join(f"v_{s}" for s in range(S))]
        for i, it in enumerate(self.iterates):
            parent = "" if it.parent is None else str(it.parent)
            vals = ",".join("%.17g" % x for x in it.values)
            lines.append(f"{i},{parent},{'%.17g' % it.scalarized},{vals}")
        return "\n".join(lines) + "\n"


def _make_iterate(game: Game, f, L: Scalarization, parent, config: PopiConfig) -> Iterate:
    br = follower_best_response(game, f, config.tie_break)
    v = evaluate_pair(game, "A", f, br.policy)
    return Iterate(np.array(f, dtype=np.float64), v, L(v), br, parent)


def _check_step(prev: Iterate, new: Iterate, q_new: np.ndarray, eta: float) -> None:
    if not np.all(q_new >= prev.values - eta):
        raise MonotonicityError(f"accepted candidate has Q below the current value: {q_new} vs {prev.values}")
    if not np.all(new.values >= q_new - eta):
        raise MonotonicityError(f"realized value {new.values} falls below its Q {q_new}")
    if compare(new.values, prev.values, eta) not in (Dominance.EQUAL, Dominance.STRICTLY_DOMINATES):
        raise MonotonicityError(f"value {new.values} does not dominate predecessor {prev.values}")


def initial_policy(game: Game, init, seed: int) -> np.ndarray:
    if init is None or (isinstance(init, str) and init == "uniform"):
        return uniform_policy(game)
    if isinstance(init, str) and init == "random":
        rng = np.random.default_rng([seed, 1])
        return rng.dirichlet(np.ones(game.num_leader_actions), size=game.num_states)
    return check_leader_policy(game, init)


def run_popi(game: Game, f_0=None, config: PopiConfig | None = None, probes: ProbeSet | None = None) -> PopiTrace:
    """Iterate :func:`popi_step` until no candidate improves or ``max_iters`` is reached."""
    config = config or PopiConfig()
    if config.mode == "backtracking":
        return run_popi_backtracking(game, f_0, config, probes)
    rng = np.random.default_rng(config.seed)
    L = config.scalarization(game)
    probes = probes or ProbeSet.grid(game, config.search.resolution, config.tie_break)
    f = initial_policy(game, f_0, config.seed)
    iterates = [_make_iterate(game, f, L, None, config)]
    log_entries = []
    termination = "max-iters"
    for t in range(config.max_iters):
        cur = iterates[-1]
        f_next, rep = popi_step(game, cur.policy, config, rng, probes, cur.values)
        log_entries.append({"iteration": t, "node": len(iterates) - 1, **rep.log_entry()})
        if rep.terminal:
            termination = "converged-equal"
            break
        new = _make_iterate(game, f_next, L, len(iterates) - 1, config)
        _check_step(cur, new, rep.candidates[rep.chosen].q_values, config.eta)
        if compare(new.values, cur.values, config.eta) is Dominance.EQUAL:
            termination = "converged-equal"
            break
        iterates.append(new)
    return PopiTrace(iterates, termination, len(iterates) - 1, log_entries, [len(iterates) - 1], L.weights)


def run_popi_backtracking(
    game: Game, f_0=None, config: PopiConfig | None = None, probes: ProbeSet | None = None
) -> PopiTrace:
    """Policy iteration that restarts from unexplored candidates when a terminal
    point is not certified Pareto-optimal over the probe set.

    Every step's selectable candidates (minus the one taken) are kept as a
    pool; the root pool is the probe lattice itself. The output is the
    terminal point with the best scalarized value, or the last iterate if the
    budget runs out first.
    """
    config = config or PopiConfig(mode="backtracking")
    rng = np.random.default_rng(config.seed)
    L = config.scalarization(game)
    probes = probes or ProbeSet.grid(game, config.search.resolution, config.tie_break)
    cap = config.search.pool_size
    f = initial_policy(game, f_0, config.seed)
    iterates = [_make_iterate(game, f, L, None, config)]
    root_pool = [p for p in probes.policies if not np.array_equal(p, f)]
    pools: list[tuple[int | None, list[np.ndarray]]] = [(None, root_pool)]
    outputs: list[int] = []
    log_entries = []
    termination = "max-iters"
    node = 0
    for t in range(config.max_iters):
        cur = iterates[node]
        f_next, rep = popi_step(game, cur.policy, config, rng, probes, cur.values)
        entry = {"iteration": t, "node": node, **rep.log_entry()}
        log_entries.append(entry)
        if rep.terminal:
            if check_sufficient_condition(game, cur.policy, probes.policies, config.tie_break, config.eta).verdict.name \
                    == "CERTIFIED_OVER_PROBES":
                termination = "certified-boundary"
                outputs.append(node)
                break
            outputs.append(node)
            while pools and not pools[-1][1]:
                pools.pop()
            if not pools:
                termination = "pools-exhausted"
                break
            parent, pool = pools[-1]
            f_next = pool.pop(int(rng.integers(len(pool))))
            entry["backtrack_to"] = parent
            q_next = None
        else:
            parent = node
            rest = [rep.candidates[i].policy for i in rep.selectable if i != rep.chosen][:cap]
            pools.append((node, rest))
            q_next = rep.candidates[rep.chosen].q_values
        new = _make_iterate(game, f_next, L, parent, config)
        if parent is not None:
            prev = iterates[parent]
            if q_next is None:
                q_next = _region_q(game, prev.values, new)
            _check_step(prev, new, q_next, config.eta)
        iterates.append(new)
        node = len(iterates) - 1
    else:
        outputs.append(node)
    if node not in outputs:
        outputs.append(node)
    final = max(outputs, key=lambda i: (iterates[i].scalarized, -i))
    return PopiTrace(iterates, termination, final, log_entries, outputs, L.weights)


def _region_q(game: Game, v: np.ndarray, it: Iterate) -> np.ndarray:
    c = _region_coefficients(game, v, it.best_response.policy)
    return np.sum(it.policy * c, axis=1)
