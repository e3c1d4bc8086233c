"""Brute-force ground truth over a lattice of leader policies."""

from __future__ import annotations

import enum
import io
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .game import ETA, Dominance, Game, GameError, compare
from .mdp import DEFAULT_TIE_BREAK, dagger_values_batch

DEFAULT_CAP = 10**7
CHUNK = 4096


class GridTooLarge(GameError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"grid has {count} policies, above the cap of {cap}")
        self.count = count
        self.cap = cap


@lru_cache(maxsize=None)
def simplex_lattice(num_actions: int, resolution: int) -> np.ndarray:
    """Rows of the uniform lattice {k/(resolution-1)} on the simplex, ascending lexicographically."""
    if resolution < 2:
        raise GameError(f"resolution must be >= 2, got {resolution}")
    n = resolution - 1
    rows = [c for c in itertools.product(range(n + 1), repeat=num_actions) if sum(c) == n]
    out = np.array(rows, dtype=np.float64) / n
    out.setflags(write=False)
    return out


def grid_size(game: Game, resolution: int) -> int:
    per_state = math.comb(resolution - 2 + game.num_leader_actions, game.num_leader_actions - 1)
    return per_state**game.num_states


def iter_grid_chunks(game: Game, resolution: int, chunk: int = CHUNK, cap: int = DEFAULT_CAP):
    """Yield the grid as ``(n, S, A)`` arrays in lexicographic order of the flattened policy."""
    total = grid_size(game, resolution)
    if total > cap:
        raise GridTooLarge(total, cap)
    rows = simplex_lattice(game.num_leader_actions, resolution)
    shape = (len(rows),) * game.num_states
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(start + chunk, total)), shape)
        yield np.stack([rows[i] for i in idx], axis=1)


def enumerate_grid(game: Game, resolution: int, cap: int = DEFAULT_CAP):
    """Stream every lattice leader policy, one ``(S, A)`` array at a time."""
    for block in iter_grid_chunks(game, resolution, cap=cap):
        yield from block


def grid_policies(game: Game, resolution: int, cap: int = DEFAULT_CAP) -> np.ndarray:
    chunks = list(iter_grid_chunks(game, resolution, cap=cap))
    return np.concatenate(chunks) if chunks else np.zeros((0, game.num_states, game.num_leader_actions))


def nondominated(values: np.ndarray, order: np.ndarray, eta: float = ETA) -> np.ndarray:
    """Indices of a mutually non-dominated subset of ``values``.

    Points equal within ``eta`` collapse onto the one with the smallest ``order``.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return np.zeros(0, dtype=np.int64)
    seq = np.lexsort((order, -values.sum(axis=1)))
    kept: list[int] = []
    for i in seq:
        if kept:
            K = values[kept]
            d = K - values[i]
            equal = np.all(np.abs(d) <= eta, axis=1)
            dom = np.all(d >= -eta, axis=1) & ~equal
            if dom.any():
                continue
            if equal.any():
                j = int(np.nonzero(equal)[0][0])
                if order[i] < order[kept[j]]:
                    kept[j] = int(i)
                continue
        kept.append(int(i))
    # sum ordering is only approximate under the tolerance; clean up exactly
    kept = np.array(kept, dtype=np.int64)
    K = values[kept]
    d = K[:, None, :] - K[None, :, :]          # d[i, j] = K[i] - K[j]
    dom = np.all(d >= -eta, axis=2) & np.any(d > eta, axis=2)
    return kept[~dom.any(axis=0)]


@dataclass
class ParetoArchive:
    policies: np.ndarray   # (K, S, A)
    values: np.ndarray     # (K, S)
    se_upper: np.ndarray   # (S,)
    resolution: int
    num_enumerated: int

    @property
    def entries(self):
        return list(zip(self.policies, self.values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        S = self.values.shape[1]
        A = self.policies.shape[2]
        buf.write("# se_upper: " + ",".join(_fmt(x) for x in self.se_upper) + "\n")
        buf.write(f"# resolution: {self.resolution}, enumerated: {self.num_enumerated}\n")
        head = [f"v_{s}" for s in range(S)] + [f"f_{s}_{a}" for s in range(S) for a in range(A)]
        buf.write(",".join(head) + "\n")
        for f, v in zip(self.policies, self.values):
            buf.write(",".join(_fmt(x) for x in list(v) + list(f.ravel())) + "\n")
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "%.17g" % x


def build_archive(
    game: Game,
    resolution: int,
    tie_break: str = DEFAULT_TIE_BREAK,
    cap: int = DEFAULT_CAP,
    eta: float = ETA,
) -> ParetoArchive:
    """Evaluate every lattice policy and keep the non-dominated values."""
    S, A = game.num_states, game.num_leader_actions
    se_upper = np.full(S, -np.inf)
    front_f = np.zeros((0, S, A))
    front_v = np.zeros((0, S))
    front_o = np.zeros(0, dtype=np.int64)
    seen = 0
    for block in iter_grid_chunks(game, resolution, cap=cap):
        va, _ = dagger_values_batch(game, block, tie_break)
        se_upper = np.maximum(se_upper, va.max(axis=0))
        pool_v = np.concatenate([front_v, va])
        pool_f = np.concatenate([front_f, block])
        pool_o = np.concatenate([front_o, np.arange(seen, seen + len(block))])
        keep = nondominated(pool_v, pool_o, eta)
        front_v, front_f, front_o = pool_v[keep], pool_f[keep], pool_o[keep]
        seen += len(block)
    srt = np.lexsort(front_v.T[::-1]) if len(front_v) else np.zeros(0, dtype=np.int64)
    return ParetoArchive(front_f[srt], front_v[srt], se_upper, resolution, seen)


class SingletonVerdict(enum.Enum):
    SSE_LIKELY = "SSE-LIKELY"
    NO_SSE_ON_GRID = "NO-SSE-ON-GRID"


def check_singleton_pareto(archive: ParetoArchive, eta: float = ETA) -> SingletonVerdict:
    """Grid-level evidence for a stationary Stackelberg equilibrium.

    An SSE policy exists exactly when the Pareto set is a single attained
    point; on a grid we can only see whether one archive value reaches the
    per-state maxima.
    """
    if len(archive.values) == 1 and compare(archive.values[0], archive.se_upper, eta) is Dominance.EQUAL:
        return SingletonVerdict.SSE_LIKELY
    return SingletonVerdict.NO_SSE_ON_GRID
