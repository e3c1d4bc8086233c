"""numba-compiled kernels; same contracts as the numpy path."""

import numpy as np
from numba import njit

TIE_SLACK = 1e-10
MAX_HOWARD_ITERS = 1000


@njit(cache=True)
def _solve(M, rhs):
    # Gaussian elimination with partial pivoting; M and rhs are overwritten.
    n = M.shape[0]
    for k in range(n):
        p = k
        big = abs(M[k, k])
        for i in range(k + 1, n):
            if abs(M[i, k]) > big:
                big = abs(M[i, k])
                p = i
        if big == 0.0:
            raise ValueError("singular evaluation system")
        if p != k:
            for j in range(n):
                tmp = M[k, j]
                M[k, j] = M[p, j]
                M[p, j] = tmp
            tmp = rhs[k]
            rhs[k] = rhs[p]
            rhs[p] = tmp
        for i in range(k + 1, n):
            m = M[i, k] / M[k, k]
            if m != 0.0:
                for j in range(k, n):
                    M[i, j] -= m * M[k, j]
                rhs[i] -= m * rhs[k]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = rhs[i]
        for j in range(i + 1, n):
            acc -= M[i, j] * x[j]
        x[i] = acc / M[i, i]
    return x


@njit(cache=True)
def _evaluate_one(T, r, gamma, f, g):
    S, A = f.shape
    M = np.zeros((S, S))
    rhs = np.zeros(S)
    for s in range(S):
        b = g[s]
        acc = 0.0
        for a in range(A):
            w = f[s, a]
            if w != 0.0:
                acc += w * r[s, a, b]
                for t in range(S):
                    M[s, t] -= gamma * w * T[s, a, b, t]
        rhs[s] = acc
        M[s, s] += 1.0
    return _solve(M, rhs)


@njit(cache=True)
def evaluate_batch(T, r, gamma, F, G):
    N, S, _ = F.shape
    out = np.empty((N, S))
    for n in range(N):
        out[n] = _evaluate_one(T, r, gamma, F[n], G[n])
    return out


@njit(cache=True)
def _best_response_one(T, rA, rB, gammaB, f, tie, g_out, V_out, Q_out, margin_out):
    S, A = f.shape
    B = rB.shape[2]
    rB_f = np.zeros((S, B))
    P_f = np.zeros((S, B, S))
    for s in range(S):
        for a in range(A):
            w = f[s, a]
            if w != 0.0:
                for b in range(B):
                    rB_f[s, b] += w * rB[s, a, b]
                    for t in range(S):
                        P_f[s, b, t] += w * T[s, a, b, t]
    g = np.empty(S, np.int64)
    for s in range(S):
        best = 0
        for b in range(1, B):
            if rB_f[s, b] > rB_f[s, best]:
                best = b
        g[s] = best

    V = np.zeros(S)
    Q = np.zeros((S, B))
    converged = False
    for _ in range(MAX_HOWARD_ITERS):
        M = np.zeros((S, S))
        rhs = np.empty(S)
        for s in range(S):
            rhs[s] = rB_f[s, g[s]]
            for t in range(S):
                M[s, t] = -gammaB * P_f[s, g[s], t]
            M[s, s] += 1.0
        V = _solve(M, rhs)
        changed = False
        for s in range(S):
            best = 0
            for b in range(B):
                acc = 0.0
                for t in range(S):
                    acc += P_f[s, b, t] * V[t]
                Q[s, b] = rB_f[s, b] + gammaB * acc
                if Q[s, b] > Q[s, best]:
                    best = b
            cur = Q[s, g[s]]
            if Q[s, best] > cur + 1e-12 * (1.0 + abs(cur)):
                g[s] = best
                changed = True
        if not changed:
            converged = True
            break
    if not converged:
        raise RuntimeError("follower policy iteration did not terminate")

    for s in range(S):
        qmax = Q[s, 0]
        for b in range(1, B):
            if Q[s, b] > qmax:
                qmax = Q[s, b]
        scores = np.full(B, -np.inf)
        smax = -np.inf
        for b in range(B):
            if Q[s, b] < qmax - TIE_SLACK:
                continue
            score = 0.0
            if tie == 1:
                for a in range(A):
                    score += f[s, a] * rA[s, a, b]
            elif tie == 2:
                for a in range(A):
                    acc = 0.0
                    for t in range(S):
                        acc += T[s, a, b, t] * V[t]
                    score += rB[s, a, b] + gammaB * acc
                score /= A
            scores[b] = score
            if score > smax:
                smax = score
        chosen = 0
        for b in range(B):
            if scores[b] >= smax - TIE_SLACK:
                chosen = b
                break
        g_out[s] = chosen
        first = -np.inf
        second = -np.inf
        for b in range(B):
            q = Q[s, b]
            if q > first:
                second = first
                first = q
            elif q > second:
                second = q
        margin_out[s] = first - second
    V_out[:] = V
    Q_out[:, :] = Q


@njit(cache=True)
def best_response_batch(T, rA, rB, gammaB, F, tie):
    N, S, _ = F.shape
    B = rB.shape[2]
    G = np.empty((N, S), np.int64)
    V = np.empty((N, S))
    Q = np.empty((N, S, B))
    margin = np.empty((N, S))
    for n in range(N):
        _best_response_one(T, rA, rB, gammaB, F[n], tie, G[n], V[n], Q[n], margin[n])
    return G, V, Q, margin
