"""Vectorized numpy kernels, batched over leader policies."""

import numpy as np

TIE_SLACK = 1e-10
MAX_HOWARD_ITERS = 1000


def induced(T, r, F, G):
    """Per-policy reward vector and transition matrix under (f, g)."""
    N, S = G.shape
    s_idx = np.arange(S)
    r_sg = r[s_idx[None, :], :, G]                   # (N, S, A)
    T_sg = T[s_idx[None, :], :, G, :]                # (N, S, A, S')
    r_fg = np.einsum("nsa,nsa->ns", F, r_sg)
    P_fg = np.einsum("nsa,nsat->nst", F, T_sg)
    return r_fg, P_fg


def evaluate_batch(T, r, gamma, F, G):
    r_fg, P_fg = induced(T, r, F, G)
    S = G.shape[1]
    M = np.eye(S)[None] - gamma * P_fg
    return np.linalg.solve(M, r_fg[..., None])[..., 0]


def best_response_batch(T, rA, rB, gammaB, F, tie):
    """Howard policy iteration on each follower MDP induced by F[n]."""
    N, S, A = F.shape
    rB_f = np.einsum("nsa,sab->nsb", F, rB)          # (N, S, B)
    P_f = np.einsum("nsa,sabt->nsbt", F, T)          # (N, S, B, S')
    n_idx = np.arange(N)[:, None]
    s_idx = np.arange(S)[None, :]
    eye = np.eye(S)[None]

    G = np.argmax(rB_f, axis=2)
    for _ in range(MAX_HOWARD_ITERS):
        M = eye - gammaB * P_f[n_idx, s_idx, G]
        V = np.linalg.solve(M, rB_f[n_idx, s_idx, G][..., None])[..., 0]
        Q = rB_f + gammaB * np.einsum("nsbt,nt->nsb", P_f, V)
        best = np.argmax(Q, axis=2)
        q_cur = np.take_along_axis(Q, G[..., None], axis=2)[..., 0]
        q_best = np.take_along_axis(Q, best[..., None], axis=2)[..., 0]
        switch = q_best > q_cur + 1e-12 * (1.0 + np.abs(q_cur))
        if not switch.any():
            break
        G = np.where(switch, best, G)
    else:
        raise RuntimeError("follower policy iteration did not terminate")

    qmax = Q.max(axis=2, keepdims=True)
    tied = Q >= qmax - TIE_SLACK
    if tie == 0:
        score = np.zeros_like(Q)
    elif tie == 1:
        score = np.einsum("nsa,sab->nsb", F, rA)
    else:
        score = rB.mean(axis=1)[None] + gammaB * np.einsum("sabt,nt->nsb", T, V) / A
    # lowest index among the maximal secondary scores
    score = np.where(tied, score, -np.inf)
    smax = score.max(axis=2, keepdims=True)
    G_out = np.argmax(score >= smax - TIE_SLACK, axis=2)

    B = Q.shape[2]
    if B > 1:
        part = np.sort(Q, axis=2)
        margin = part[..., -1] - part[..., -2]
    else:
        margin = np.full((N, S), np.inf)
    return G_out.astype(np.int64), V, Q, margin
