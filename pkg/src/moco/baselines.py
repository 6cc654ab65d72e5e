"""Reference methods and exact oracles.

``enumerate_policy`` walks every construction trajectory with the
single-state kernel, independent of the vectorized sampler it is used to
check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import SizeLimitError, WrongKindError
from .graph import Kind, ProblemInstance
from .kernel import (action_probabilities, apply_action, apply_fallback, feasible_actions,
                     initial_state, objective, solution_of)
from .rollout import SolutionArchive, reinforce_gradient, sample_lanes, update_archive

HELD_KARP_MAX_N = 16
MIS_EXACT_MAX_N = 40
ENUMERATION_LIMIT = 10 ** 6


@dataclass
class OracleResult:
    objective: float
    solution: np.ndarray
    explored: int
    wall_time: float


def gap_percent(kind: Kind, value: float, reference: float) -> float:
    """Relative gap in percent; ``value`` and ``reference`` as reported (length or set size)."""
    if Kind(kind) is Kind.TSP:
        return 100.0 * (value - reference) / reference
    return 100.0 * (reference - value) / reference


# ---- trajectory enumeration ---------------------------------------------


@dataclass
class PolicyEnumeration:
    expected_objective: float
    gradient: np.ndarray
    n_trajectories: int
    total_probability: float


def enumerate_policy(instance: ProblemInstance, theta, start_node: int = 0,
                     limit: int = ENUMERATION_LIMIT) -> PolicyEnumeration:
    """Exact expected objective and its gradient w.r.t. the heatmap."""
    theta = np.asarray(theta, dtype=np.float64)
    N = instance.n_decisions
    sum_pf = 0.0
    sum_p = 0.0
    sum_pfs = np.zeros(N)
    sum_ps = np.zeros(N)
    count = 0
    stack = [(initial_state(instance, start_node), 1.0, np.zeros(N))]
    while stack:
        state, prob, score = stack.pop()
        if state.terminal:
            count += 1
            if count > limit:
                raise SizeLimitError(f"more than {limit} trajectories")
            f = objective(instance, solution_of(state))
            sum_p += prob
            sum_pf += prob * f
            sum_pfs += prob * f * score
            sum_ps += prob * score
            continue
        if not feasible_actions(state).any():
            # forced arcs carry no parameter and probability one
            stack.append((apply_fallback(state), prob, score))
            continue
        p = action_probabilities(theta, state)
        for a in np.flatnonzero(p > 0):
            s = score - p
            s[a] += 1.0
            stack.append((apply_action(state, int(a)), prob * p[a], s))
    expected = sum_pf / sum_p
    grad = sum_pfs - expected * sum_ps
    return PolicyEnumeration(expected, grad, count, sum_p)


# ---- exact TSP ----------------------------------------------------------


def held_karp_exact(instance: ProblemInstance) -> OracleResult:
    """Optimal tour by dynamic programming over subsets, O(n^2 2^n)."""
    if instance.kind is not Kind.TSP:
        raise WrongKindError("Held-Karp solves TSP instances")
    n = instance.n_nodes
    if n > HELD_KARP_MAX_N:
        raise SizeLimitError(f"Held-Karp limited to n <= {HELD_KARP_MAX_N}, got {n}")
    t0 = time.perf_counter()
    d = instance.dense_distances()
    # subsets of nodes 1..n-1; node 0 is the fixed start
    m = n - 1
    size = 1 << m
    cost = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int64)
    cost[1 << np.arange(m), np.arange(m)] = d[0, 1:]
    masks = np.arange(size)
    popcount = np.array([bin(s).count("1") for s in range(size)])
    bits = (masks[:, None] >> np.arange(m)) & 1
    dd = d[1:, 1:]
    for layer in range(2, m + 1):
        layer_masks = masks[popcount == layer]
        for j in range(m):
            has_j = layer_masks[bits[layer_masks, j] == 1]
            prev = has_j ^ (1 << j)
            cand = cost[prev] + dd[:, j][None, :]
            best = np.argmin(cand, axis=1)
            cost[has_j, j] = cand[np.arange(len(has_j)), best]
            parent[has_j, j] = best
    full = size - 1
    closing = cost[full] + d[1:, 0]
    last = int(np.argmin(closing))
    tour = []
    mask, j = full, last
    while j != -1:
        tour.append(j + 1)
        pj = parent[mask, j]
        mask ^= 1 << j
        j = int(pj)
    tour = np.array([0] + tour[::-1], dtype=np.int64)
    return OracleResult(objective(instance, tour), tour, int(size * m), time.perf_counter() - t0)


def brute_force_tsp(instance: ProblemInstance) -> float:
    """Shortest tour by trying all (n-1)! orders; for tests on tiny instances."""
    from itertools import permutations

    from .kernel import tour_lengths
    n = instance.n_nodes
    perms = np.array([(0,) + p for p in permutations(range(1, n))], dtype=np.int64)
    return float(tour_lengths(instance.coords, perms).min())


# ---- exact MIS ----------------------------------------------------------


def mis_exact(instance: ProblemInstance) -> OracleResult:
    """Maximum independent set by branch and bound on bitmasks."""
    if instance.kind is not Kind.MIS:
        raise WrongKindError("mis_exact solves MIS instances")
    n = instance.n_nodes
    if n > MIS_EXACT_MAX_N:
        raise SizeLimitError(f"exact MIS limited to n <= {MIS_EXACT_MAX_N}, got {n}")
    t0 = time.perf_counter()
    nbr = [0] * n
    for u, v in instance.mis_edges.tolist():
        nbr[u] |= 1 << v
    best = [0, 0]
    nodes = [0]

    def search(cand: int, chosen: int, size: int):
        nodes[0] += 1
        if size + cand.bit_count() <= best[0]:
            return
        if cand == 0:
            best[0], best[1] = size, chosen
            return
        # a vertex of degree <= 1 within the candidates is always safe to take
        lo_v, lo_deg, hi_v, hi_deg = -1, n + 1, -1, -1
        c = cand
        while c:
            low = c & -c
            v = low.bit_length() - 1
            c ^= low
            deg = (nbr[v] & cand).bit_count()
            if deg < lo_deg:
                lo_v, lo_deg = v, deg
            if deg > hi_deg:
                hi_v, hi_deg = v, deg
        if lo_deg <= 1:
            search(cand & ~(1 << lo_v) & ~nbr[lo_v], chosen | (1 << lo_v), size + 1)
            return
        v = hi_v
        search(cand & ~(1 << v) & ~nbr[v], chosen | (1 << v), size + 1)
        search(cand & ~(1 << v), chosen, size)

    search((1 << n) - 1, 0, 0)
    x = np.array([(best[1] >> i) & 1 for i in range(n)], dtype=bool)
    return OracleResult(objective(instance, x), x, nodes[0], time.perf_counter() - t0)


# ---- farthest insertion -------------------------------------------------


def farthest_insertion(instance: ProblemInstance) -> np.ndarray:
    """Classical farthest-insertion tour (deterministic, ties to the lowest index)."""
    if instance.kind is not Kind.TSP:
        raise WrongKindError("farthest insertion builds TSP tours")
    d = instance.dense_distances()
    n = instance.n_nodes
    i, j = np.unravel_index(np.argmax(d), d.shape)
    tour = [int(min(i, j)), int(max(i, j))]
    in_tour = np.zeros(n, dtype=bool)
    in_tour[tour] = True
    to_tour = np.minimum(d[tour[0]], d[tour[1]])
    for _ in range(n - 2):
        c = int(np.argmax(np.where(in_tour, -1.0, to_tour)))
        t = np.array(tour)
        nxt = np.roll(t, -1)
        delta = d[t, c] + d[c, nxt] - d[t, nxt]
        pos = int(np.argmin(delta))
        tour.insert(pos + 1, c)
        in_tour[c] = True
        to_tour = np.minimum(to_tour, d[c])
    return np.array(tour, dtype=np.int64)


# ---- Adam on theta ------------------------------------------------------

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def adam_theta_search(instance: ProblemInstance, theta0, config, lr: float = 0.05):
    """Plain Adam descent on the heatmap with REINFORCE gradients.

    Restarts, start nodes and random streams follow ``parallel_restarts``, so
    for a given config both methods see the same samples until their heatmaps
    diverge. ``theta0`` is (N,) or one row per restart.
    """
    from .search import SearchResult, TrajectoryLog, lane_rng, restart_plan

    config.validate()
    seeds, starts = restart_plan(instance, config)
    M, N = config.M, instance.n_decisions
    theta = np.broadcast_to(np.asarray(theta0, dtype=np.float64), (M, N)).copy()
    m, v = np.zeros((M, N)), np.zeros((M, N))
    b1, b2 = ADAM_BETAS
    archives = [SolutionArchive(instance.kind) for _ in range(M)]
    log = TrajectoryLog()
    for k in range(config.K):
        t0 = time.perf_counter()
        batches = sample_lanes(instance, theta, config.b, [lane_rng(s, k) for s in seeds], starts)
        grad = np.stack([reinforce_gradient(bt, th) for bt, th in zip(batches, theta)])
        archives = [update_archive(a, bt, instance) for a, bt in zip(archives, batches)]
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad ** 2
        mhat = m / (1 - b1 ** (k + 1))
        vhat = v / (1 - b2 ** (k + 1))
        theta = theta - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        wall = (time.perf_counter() - t0) * 1000.0
        for r, (a, bt) in enumerate(zip(archives, batches)):
            log.append(r, k, a.best_objective, bt.objectives.min(), None, wall)
    objs = np.array([a.best_objective for a in archives])
    best = int(np.argmin(objs))
    sols = [a.best.solution for a in archives]
    return SearchResult(sols[best], float(objs[best]), log, objs, sols, config.K * config.b * M, best, theta)
