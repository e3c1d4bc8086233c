"""Hot loops: batched follower best responses and policy evaluation.

Two interchangeable implementations live here. The numba one is used when
numba imports cleanly; setting ``SSG_POPI_NO_NUMBA=1`` forces the pure-numpy
path. Both take contiguous float64/int64 arrays and return the same tuple
shapes:

``best_response_batch(T, rA, rB, gammaB, F, tie) -> (G, V, Q, margin)``
    ``F`` is ``(N, S, A)``; ``G`` is ``(N, S)`` follower actions, ``V`` the
    follower's optimal values, ``Q`` the ``(N, S, B)`` follower action values
    and ``margin`` the best-minus-second-best gap per state.

``evaluate_batch(T, r, gamma, F, G) -> V``
    Exact value of every ``(F[n], G[n])`` pair for reward ``r``.
"""

import logging
import os
from types import ModuleType

from . import _numpy

log = logging.getLogger(__name__)

TIE_RULES = {"lowest": 0, "optimistic": 1, "perturbed": 2}


def _load_numba() -> ModuleType | None:
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba is a hard dependency in CI
        log.warning("numba unavailable, using numpy kernels")
        return None
    return _numba


def get_backend(name: str) -> ModuleType:
    if name == "numpy":
        return _numpy
    if name == "numba":
        mod = _load_numba()
        if mod is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return mod
    raise ValueError(f"unknown kernel backend {name!r}")


if os.environ.get("SSG_POPI_NO_NUMBA", "").strip() not in ("", "0"):
    _impl = _numpy
else:
    _impl = _load_numba() or _numpy

BACKEND = "numba" if _impl is not _numpy else "numpy"
best_response_batch = _impl.best_response_batch
evaluate_batch = _impl.evaluate_batch
