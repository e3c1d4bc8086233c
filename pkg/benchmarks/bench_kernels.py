"""Compare the numba and numpy kernel backends on batched best responses and oracle sweeps.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from ssg_popi.game import random_game
from ssg_popi.kernels import get_backend
from ssg_popi.oracle import grid_policies

CASES = [
    # (states, leader actions, follower actions, grid resolution)
    (2, 2, 2, 101),
    (3, 2, 3, 21),
    (4, 3, 3, 5),
]


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = {name: get_backend(name) for name in ("numpy", "numba")}
    print(f"{'shape':>12} {'policies':>9} {'kernel':>14} {'numpy s':>9} {'numba s':>9} {'speedup':>8}")
    for S, A, B, res in CASES:
        game = random_game(np.random.default_rng(0), S, A, B, gamma_A=0.9, gamma_B=0.9)
        F = np.ascontiguousarray(grid_policies(game, res))
        T, rA, rB, gB = game.transition, game.reward_leader, game.reward_follower, game.gamma_follower
        G = backends["numpy"].best_response_batch(T, rA, rB, gB, F, 0)[0]
        jobs = {
            "best_response": lambda k: k.best_response_batch(T, rA, rB, gB, F, 0),
            "evaluate": lambda k: k.evaluate_batch(T, rA, game.gamma_leader, F, G),
        }
        for label, job in jobs.items():
            job(backends["numba"])  # compile outside the timed region
            times = {name: _time(lambda: job(k), args.repeat) for name, k in backends.items()}
            print(f"{f'{S}x{A}x{B}':>12} {len(F):>9} {label:>14} {times['numpy']:>9.4f} {times['numba']:>9.4f} "
                  f"{times['numpy'] / times['numba']:>7.1f}x")


if __name__ == "__main__":
    main()
