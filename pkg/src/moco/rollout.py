"""Batched solution sampling, REINFORCE gradients, momenta and the solution archive.

Sampling is vectorized over *lanes*: each lane has its own heatmap, start
node and random stream, which lets many independent searches advance in
lockstep. Every sample consumes one row of uniforms drawn up front from its
lane's generator (inverse-CDF sampling), so results do not depend on how the
work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, InvalidParameterError
from .graph import Kind, ProblemInstance
from .kernel import tour_lengths, tour_to_bitset

BETAS = (0.1, 0.5, 0.9, 0.99, 0.999, 0.9999)
ARCHIVE_SIZE = 32


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class RolloutBatch:
    """``b`` sampled solutions of one lane.

    ``score`` holds, per sample, the summed score function
    sum_t (onehot(a_t) - p_t) over decision variables, which is all the
    gradient estimator needs.
    """

    theta: np.ndarray
    solutions: np.ndarray
    objectives: np.ndarray
    score: np.ndarray
    n_forced: np.ndarray

    @property
    def b(self) -> int:
        return len(self.objectives)

    def best_index(self) -> int:
        return int(np.argmin(self.objectives))


def _masked_softmax_rows(logits: np.ndarray, feas: np.ndarray) -> np.ndarray:
    mx = np.max(logits, axis=1, where=feas, initial=-np.inf)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    w = np.where(feas, np.exp(np.where(feas, logits - mx[:, None], 0.0)), 0.0)
    s = w.sum(1, keepdims=True)
    return w / np.where(s > 0, s, 1.0)


def _inverse_cdf(p: np.ndarray, feas: np.ndarray, u: np.ndarray) -> np.ndarray:
    cs = np.cumsum(p, axis=1)
    r = (cs <= (u * cs[:, -1])[:, None]).sum(1)
    r = np.minimum(r, p.shape[1] - 1)
    # rounding can land on a masked tail entry; fall back to the last feasible one
    bad = ~feas[np.arange(len(r)), r]
    if bad.any():
        last = p.shape[1] - 1 - np.argmax(feas[bad][:, ::-1], axis=1)
        r[bad] = last
    return r


def _sample_tsp(instance, thetas, starts, uniforms, greedy=False):
    S, N = thetas.shape
    n, k = instance.n_nodes, instance.degree
    b = uniforms.shape[0] // S
    R = S * b
    rows = np.arange(R)
    lane = np.repeat(np.arange(S), b)
    theta2 = thetas.reshape(S, n, k)
    nbrs = instance.out_neighbors
    coords = instance.coords

    visited = np.zeros((R, n), dtype=bool)
    cur = np.asarray(starts)[lane].astype(np.int64)
    visited[rows, cur] = True
    tours = np.empty((R, n), dtype=np.int64)
    tours[:, 0] = cur
    score = np.zeros((R, n, k))
    n_forced = np.zeros(R, dtype=np.int64)

    for t in range(n - 1):
        nb = nbrs[cur]
        feas = ~visited[rows[:, None], nb]
        live = feas.any(1)
        nxt = np.empty(R, dtype=np.int64)
        if live.any():
            lr = rows[live]
            p = _masked_softmax_rows(theta2[lane[lr], cur[lr]], feas[lr])
            if greedy:
                r = np.argmax(np.where(feas[lr], p, -1.0), axis=1)
            else:
                r = _inverse_cdf(p, feas[lr], uniforms[lr, t])
            g = -p
            g[np.arange(len(lr)), r] += 1.0
            # each (sample, node) row is left exactly once, so assignment suffices
            score[lr, cur[lr]] = g
            nxt[lr] = nb[lr, r]
        dead = ~live
        if dead.any():
            dr = rows[dead]
            d = np.sqrt(((coords[None, :, :] - coords[cur[dr]][:, None, :]) ** 2).sum(-1))
            d[visited[dr]] = np.inf
            nxt[dr] = np.argmin(d, axis=1)
            n_forced[dr] += 1
        visited[rows, nxt] = True
        tours[:, t + 1] = nxt
        cur = nxt

    objectives = tour_lengths(coords, tours)
    return tours, objectives, score.reshape(R, N), n_forced


def _sample_mis(instance, thetas, uniforms, greedy=False):
    S, n = thetas.shape
    b = uniforms.shape[0] // S
    R = S * b
    lane = np.repeat(np.arange(S), b)
    adj = instance.adjacency
    blocked = np.zeros((R, n), dtype=bool)
    x = np.zeros((R, n), dtype=bool)
    score = np.zeros((R, n))
    for t in range(n):
        feas = ~blocked
        active = np.flatnonzero(feas.any(1))
        if len(active) == 0:
            break
        fa = feas[active]
        p = _masked_softmax_rows(thetas[lane[active]], fa)
        if greedy:
            a = np.argmax(np.where(fa, p, -1.0), axis=1)
        else:
            a = _inverse_cdf(p, fa, uniforms[active, t])
        score[active] -= p
        score[active, a] += 1.0
        x[active, a] = True
        nb = adj[a]
        nb[np.arange(len(a)), a] = True
        blocked[active] |= nb
    objectives = -x.sum(1).astype(np.float64)
    return x, objectives, score, np.zeros(R, dtype=np.int64)


def sample_lanes(instance: ProblemInstance, thetas: np.ndarray, b: int, rngs, starts=None,
                 greedy: bool = False) -> list[RolloutBatch]:
    """Sample ``b`` constructions for each of the S lanes of ``thetas`` (S, N)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != instance.n_decisions:
        raise ContractViolation(f"heatmaps of shape {thetas.shape} do not fit N={instance.n_decisions}")
    if b < 2:
        raise InvalidParameterError("batch size b must be >= 2 for the average baseline")
    S = thetas.shape[0]
    if len(rngs) != S:
        raise ContractViolation("need one random stream per lane")
    steps = instance.n_nodes
    uniforms = np.concatenate([as_generator(g).random((b, steps)) for g in rngs])
    if instance.kind is Kind.TSP:
        starts = np.zeros(S, dtype=np.int64) if starts is None else np.asarray(starts)
        sols, objs, score, forced = _sample_tsp(instance, thetas, starts, uniforms, greedy)
    else:
        sols, objs, score, forced = _sample_mis(instance, thetas, uniforms, greedy)
    out = []
    for s in range(S):
        sl = slice(s * b, (s + 1) * b)
        out.append(RolloutBatch(thetas[s].copy(), sols[sl], objs[sl], score[sl], forced[sl]))
    return out


def sample_batch(theta, instance: ProblemInstance, b: int, rng, start_node: int = 0,
                 greedy: bool = False) -> RolloutBatch:
    theta = np.asarray(theta, dtype=np.float64)
    return sample_lanes(instance, theta[None], b, [as_generator(rng)], [start_node], greedy)[0]


def reinforce_gradient(batch: RolloutBatch, theta) -> np.ndarray:
    """Average-reward-baseline REINFORCE estimate of the gradient of expected cost."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != batch.theta.shape or not np.array_equal(theta, batch.theta):
        raise ContractViolation("batch was not sampled from this heatmap")
    adv = batch.objectives - batch.objectives.mean()
    return adv @ batch.score / batch.b


# ---- momenta ------------------------------------------------------------


@dataclass
class GradientState:
    grad: np.ndarray
    momenta: np.ndarray  # (len(BETAS),) + grad.shape

    @classmethod
    def zeros(cls, shape) -> GradientState:
        shape = tuple(np.atleast_1d(shape))
        return cls(np.zeros(shape), np.zeros((len(BETAS),) + shape))


def update_momenta(state: GradientState, grad) -> GradientState:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.grad.shape:
        raise ContractViolation("gradient shape mismatch")
    beta = np.asarray(BETAS).reshape((-1,) + (1,) * grad.ndim)
    return GradientState(grad.copy(), beta * state.momenta + (1.0 - beta) * grad)


# ---- archive ------------------------------------------------------------


def solution_keys(kind: Kind, sols: np.ndarray) -> list[bytes]:
    """Identity keys of a (B, n) batch; tours are rotated to start at node 0."""
    sols = np.asarray(sols)
    if kind is Kind.TSP:
        n = sols.shape[1]
        shift = np.argmin(sols, axis=1)
        sols = np.take_along_axis(sols, (np.arange(n)[None, :] + shift[:, None]) % n, axis=1)
        sols = np.ascontiguousarray(sols, dtype=np.int64)
    else:
        sols = np.packbits(sols.astype(bool), axis=1)
    return [row.tobytes() for row in sols]


def memberships(instance: ProblemInstance, sols: np.ndarray) -> np.ndarray:
    """(B, N) decision variables used by each solution of a batch."""
    sols = np.asarray(sols)
    if instance.kind is Kind.MIS:
        return sols.astype(bool)
    ids = instance.edge_lookup[sols, np.roll(sols, -1, axis=1)]
    out = np.zeros((len(sols), instance.n_decisions), dtype=bool)
    rows = np.broadcast_to(np.arange(len(sols))[:, None], ids.shape)
    ok = ids >= 0
    out[rows[ok], ids[ok]] = True
    return out


@dataclass(frozen=True)
class ArchiveEntry:
    objective: float
    key: bytes
    solution: np.ndarray = field(compare=False)
    membership: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class SolutionArchive:
    kind: Kind
    capacity: int = ARCHIVE_SIZE
    entries: tuple = ()
    prev_best: float | None = None

    def __len__(self):
        return len(self.entries)

    @property
    def best(self) -> ArchiveEntry:
        if not self.entries:
            raise ContractViolation("archive is empty")
        return self.entries[0]

    @property
    def best_objective(self) -> float:
        return self.best.objective

    @property
    def objectives(self) -> np.ndarray:
        return np.array([e.objective for e in self.entries])


def update_archive(archive: SolutionArchive, batch: RolloutBatch, instance: ProblemInstance) -> SolutionArchive:
    """Merge a batch, keeping the ``capacity`` best distinct solutions."""
    pool = {e.key: e for e in archive.entries}
    keys = solution_keys(archive.kind, batch.solutions)
    fresh = {}
    for i, key in enumerate(keys):
        if key not in pool and key not in fresh:
            fresh[key] = i
    if fresh:
        idx = np.fromiter(fresh.values(), dtype=np.int64)
        member = memberships(instance, batch.solutions[idx])
        for j, (key, i) in enumerate(fresh.items()):
            pool[key] = ArchiveEntry(float(batch.objectives[i]), key, batch.solutions[i].copy(), member[j])
    ranked = sorted(pool.values(), key=lambda e: (e.objective, e.key))[:archive.capacity]
    prev = archive.entries[0].objective if archive.entries else None
    return SolutionArchive(archive.kind, archive.capacity, tuple(ranked), prev)
