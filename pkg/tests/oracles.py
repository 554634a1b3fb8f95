"""Independent reference implementations used by the tests.

Nothing here imports the package's algorithms: environments are described
as plain Python structures and solved with loops or a linear solve, so a bug
in the package cannot cancel out against the same bug here.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np


def bfs_shortest_path(width, height, walls, start, goal):
    """Number of moves from ``start`` to ``goal`` on a 4-connected grid (None if unreachable)."""
    walls = {tuple(w) for w in walls}
    seen = {tuple(start): 0}
    queue = deque([tuple(start)])
    while queue:
        r, c = queue.popleft()
        if (r, c) == tuple(goal):
            return seen[(r, c)]
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nxt = (r + dr, c + dc)
            if 0 <= nxt[0] < height and 0 <= nxt[1] < width and nxt not in walls and nxt not in seen:
                seen[nxt] = seen[(r, c)] + 1
                queue.append(nxt)
    return None


def value_iteration_loops(P, R, terminal, discount, sweeps=100_000, tol=1e-13):
    """Optimal Q by plain nested loops (Gauss-Seidel-free, synchronous)."""
    S, A, _ = P.shape
    q = [[0.0] * A for _ in range(S)]
    for _ in range(sweeps):
        v = [0.0 if s in terminal else max(q[s]) for s in range(S)]
        new = [[0.0] * A for _ in range(S)]
        delta = 0.0
        for s in range(S):
            if s in terminal:
                continue
            for a in range(A):
                total = 0.0
                for s2 in range(S):
                    p = P[s][a][s2]
                    if p:
                        total += p * (R[s][a][s2] + discount * v[s2])
                new[s][a] = total
                delta = max(delta, abs(total - q[s][a]))
        q = new
        if delta < tol:
            break
    return np.array(q)


def policy_value_linear(P, R, terminal, pi, discount):
    """V^pi for the infinite-horizon discounted problem by solving (I - discount P_pi) V = r_pi."""
    S = P.shape[0]
    P_pi = np.einsum("sa,sat->st", pi, P)
    r_pi = np.einsum("sa,sat,sat->s", pi, P, R)
    for s in terminal:
        P_pi[s, :] = 0.0
        r_pi[s] = 0.0
    return np.linalg.solve(np.eye(S) - discount * P_pi, r_pi)


def finite_horizon_value(P, R, terminal, pi, horizon):
    """Expected undiscounted return within ``horizon`` steps, by backward induction."""
    S = P.shape[0]
    v = np.zeros(S)
    for _ in range(horizon):
        q = np.einsum("sat,sat->sa", P, R + v[None, None, :])
        v = (pi * q).sum(axis=1)
        for s in terminal:
            v[s] = 0.0
    return v


def alg1_trace(n, t0, gamma, k):
    """Hand-style trace of the reveal loop: (iterations, gradient steps, visible after each)."""
    visible, iters, steps, seen = t0, 0, 0, []
    while visible < n:
        visible = min(visible + gamma, n)
        steps += 1 + k
        iters += 1
        seen.append(visible)
    return iters, steps, seen


def perf_at_brute(points, size, fraction):
    """points: list of (data_count, norm_score, phase)."""
    best = None
    for d, s, phase in points:
        if phase == "offline" and d <= fraction * size:
            best = s
    return best


def iqm_brute(xs):
    xs = sorted(xs)
    k = len(xs) // 4
    mid = xs[k: len(xs) - k]
    return sum(mid) / len(mid)


def optimality_gap_brute(xs, threshold=100.0):
    return sum(max(threshold - x, 0.0) for x in xs) / len(xs)


def discounted_sum(rewards, discount):
    total, w = 0.0, 1.0
    for r in rewards:
        total += w * r
        w *= discount
    return total


def chain_tables(length, step_reward=0.0, goal_reward=1.0, slip=0.0):
    """Transition and reward arrays for the chain environment written out by hand."""
    S, A = length + 1, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    goal = length
    for s in range(S):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        left, right = max(s - 1, 0), s + 1
        for a, intended, other in ((0, left, right), (1, right, left)):
            P[s, a, intended] += 1.0 - slip
            P[s, a, other] += slip
    R[:, :, :] = step_reward
    R[:, :, goal] += goal_reward
    return P, R, {goal}


def standard_error(values):
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / math.sqrt(values.size))
