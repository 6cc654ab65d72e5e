"""The learned-optimizer search loop.

``run_lanes`` advances several independent searches on one instance in
lockstep. A lane is one (meta-parameters, random stream, start node)
triple; parallel restarts share parameters, ES perturbations share random
streams. Each iteration samples ``b`` solutions per lane, updates gradient,
momenta and archive, builds the feature graph and replaces the heatmap by
``theta_tilde / alpha`` from the update network.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation, WrongKindError
from .features import build_init_graph, build_update_graph
from .gnn import GnnParams, MetaParams, forward
from .graph import Kind, ProblemInstance
from .rollout import (ARCHIVE_SIZE, GradientState, SolutionArchive, reinforce_gradient, sample_lanes,
                      update_archive, update_momenta)

CONDITIONING_MODES = ("full", "naive_continuation")
# heatmap entries are clipped to this magnitude; a logit gap of 1e3 is already
# deterministic under softmax, the bound only keeps features finite when
# alpha collapses and theta would otherwise compound over iterations
THETA_LIMIT = 1e3


@dataclass
class SearchConfig:
    K: int = 50
    b: int = 32
    M: int = 1
    L: int = ARCHIVE_SIZE
    conditioning_mode: str = "full"
    # budget the update network was trained for; used by naive continuation
    train_K: int | None = None
    seed: int = 0

    def validate(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.b < 2:
            raise ConfigError("b must be >= 2")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.L != ARCHIVE_SIZE:
            raise ConfigError(f"archive size is fixed at {ARCHIVE_SIZE}")
        if self.conditioning_mode not in CONDITIONING_MODES:
            raise ConfigError(f"conditioning_mode must be one of {CONDITIONING_MODES}")
        if self.conditioning_mode == "naive_continuation" and not self.train_K:
            raise ConfigError("naive continuation needs the training budget train_K")
        return self

    @property
    def K_feature(self) -> int:
        return self.K if self.conditioning_mode == "full" else self.train_K


TRAJECTORY_FIELDS = ("restart", "k", "best_objective", "batch_best", "alpha", "wall_ms")


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)

    def append(self, restart, k, best, batch_best, alpha, wall_ms):
        self.rows.append((int(restart), int(k), float(best), float(batch_best),
                          float("nan") if alpha is None else float(alpha), float(wall_ms)))

    def for_restart(self, restart: int) -> TrajectoryLog:
        return TrajectoryLog([r for r in self.rows if r[0] == restart])

    def best_curve(self, restart: int = 0) -> np.ndarray:
        return np.array([r[2] for r in self.rows if r[0] == restart])

    def best_at(self, k: int) -> float:
        """Best objective over all restarts after iteration ``k`` (anytime read-out)."""
        vals = [r[2] for r in self.rows if r[1] == k]
        if not vals:
            raise ContractViolation(f"no record for iteration {k}")
        return min(vals)

    def to_csv(self, kind: Kind | None = None, include_time: bool = True) -> str:
        """CSV text; objectives converted to reported values when ``kind`` is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        fields = TRAJECTORY_FIELDS if include_time else TRAJECTORY_FIELDS[:-1]
        w.writerow(fields)
        sign = -1.0 if kind is not None and Kind(kind) is Kind.MIS else 1.0
        for r in self.rows:
            row = [r[0], r[1], repr(sign * r[2]), repr(sign * r[3]), repr(r[4])]
            if include_time:
                row.append(f"{r[5]:.3f}")
            w.writerow(row)
        return buf.getvalue()


@dataclass
class SearchState:
    """Lane-stacked state of the search loop at iteration ``k``."""

    instance: ProblemInstance
    theta: np.ndarray  # (L, N)
    grad: GradientState  # grad (L, N), momenta (6, L, N)
    archives: list
    k: int
    K: int
    K_feature: int
    start_nodes: np.ndarray
    lane_seeds: list
    log: TrajectoryLog = field(default_factory=TrajectoryLog)
    n_constructions: int = 0
    last_alpha: np.ndarray | None = None
    # lanes whose update network produced a non-finite heatmap; they keep their last theta
    diverged: np.ndarray | None = None

    @property
    def n_lanes(self) -> int:
        return self.theta.shape[0]

    def best_objectives(self) -> np.ndarray:
        return np.array([a.best_objective for a in self.archives])


@dataclass
class SearchResult:
    best_solution: np.ndarray
    best_objective: float
    trajectory: TrajectoryLog
    restart_objectives: np.ndarray
    restart_solutions: list
    n_constructions: int
    best_restart: int = 0
    final_theta: np.ndarray | None = None


def _check_kind(instance, params):
    if params.kind is not instance.kind:
        raise WrongKindError(f"{params.kind.value} network applied to a {instance.kind.value} instance")


def initialize_theta(instance: ProblemInstance, phi_init: GnnParams, start_nodes=0) -> np.ndarray:
    """Initial heatmap(s) from the init network; (L, N) with one row per lane."""
    _check_kind(instance, phi_init)
    starts = np.atleast_1d(start_nodes) if instance.kind is Kind.TSP else None
    theta, _ = forward(phi_init, build_init_graph(instance, starts))
    return np.asarray(theta, dtype=np.float64)


def lane_rng(seed, k: int) -> np.random.Generator:
    return np.random.default_rng(list(np.atleast_1d(seed)) + [k])


def start_state(instance, meta: MetaParams, K, K_feature, lane_seeds, start_nodes) -> SearchState:
    _check_kind(instance, meta.init)
    L = len(lane_seeds)
    starts = np.broadcast_to(np.asarray(start_nodes, dtype=np.int64), (L,)).copy()
    theta = initialize_theta(instance, meta.init, starts)
    theta = np.broadcast_to(theta, (L, instance.n_decisions)).copy()
    archives = [SolutionArchive(instance.kind) for _ in range(L)]
    return SearchState(instance, theta, GradientState.zeros((L, instance.n_decisions)), archives, 0, K,
                       K_feature, starts, list(lane_seeds))


def sample_and_record(state: SearchState, b: int):
    """Sample a batch per lane and fold it into gradient, momenta and archives."""
    inst = state.instance
    rngs = [lane_rng(s, state.k) for s in state.lane_seeds]
    batches = sample_lanes(inst, state.theta, b, rngs, state.start_nodes)
    grads = np.stack([reinforce_gradient(bt, th) for bt, th in zip(batches, state.theta)])
    state.grad = update_momenta(state.grad, grads)
    state.archives = [update_archive(a, bt, inst) for a, bt in zip(state.archives, batches)]
    state.n_constructions += b * state.n_lanes
    return batches


def apply_update(state: SearchState, phi_update: GnnParams, alpha_override=None):
    """theta <- theta_tilde / alpha from the update network."""
    fg = build_update_graph(state)
    theta_tilde, alpha = forward(phi_update, fg)
    if alpha_override is not None:
        alpha = np.broadcast_to(np.asarray(alpha_override, dtype=np.float64), (state.n_lanes,))
    theta_tilde = np.asarray(theta_tilde, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if theta_tilde.shape[0] != state.n_lanes:
        theta_tilde = np.broadcast_to(theta_tilde, (state.n_lanes, theta_tilde.shape[-1]))
    with np.errstate(all="ignore"):
        theta = theta_tilde / np.broadcast_to(alpha, (state.n_lanes,))[:, None]
    bad = ~np.isfinite(theta).all(1)
    if state.diverged is None:
        state.diverged = np.zeros(state.n_lanes, dtype=bool)
    state.diverged |= bad
    state.theta = np.where(bad[:, None], state.theta, np.clip(theta, -THETA_LIMIT, THETA_LIMIT))
    state.last_alpha = alpha
    return theta_tilde, alpha


def step(state: SearchState, phi_update: GnnParams, b: int, update: bool = True, alpha_override=None,
         restart_ids=None) -> SearchState:
    """One iteration: sample, record, and (unless ``update`` is False) replace theta."""
    if state.k >= state.K:
        raise ContractViolation("budget exhausted")
    t0 = time.perf_counter()
    batches = sample_and_record(state, b)
    alpha = None
    if update:
        _, alpha = apply_update(state, phi_update, alpha_override)
    wall = (time.perf_counter() - t0) * 1000.0
    ids = range(state.n_lanes) if restart_ids is None else restart_ids
    for lane, (rid, arch, bt) in enumerate(zip(ids, state.archives, batches)):
        state.log.append(rid, state.k, arch.best_objective, bt.objectives.min(),
                         None if alpha is None else alpha[lane], wall)
    state.k += 1
    return state


def run_lanes(instance, meta: MetaParams, K: int, b: int, lane_seeds, start_nodes, K_feature=None,
              alpha_override=None, restart_ids=None) -> SearchState:
    """Run K iterations on every lane; no update follows the final batch."""
    state = start_state(instance, meta, K, K if K_feature is None else K_feature, lane_seeds, start_nodes)
    for k in range(K):
        step(state, meta.update, b, update=k < K - 1, alpha_override=alpha_override, restart_ids=restart_ids)
    return state


def restart_plan(instance: ProblemInstance, config: SearchConfig):
    """Seeds and start nodes of the M restarts; restart m is the same for every M."""
    seeds = [(config.seed, m) for m in range(config.M)]
    if instance.kind is Kind.TSP:
        starts = [int(np.random.default_rng([config.seed, m, 7]).integers(instance.n_nodes)) for m in range(config.M)]
    else:
        starts = [0] * config.M
    return seeds, starts


def _result(state: SearchState) -> SearchResult:
    objs = state.best_objectives()
    best = int(np.argmin(objs))
    sols = [a.best.solution for a in state.archives]
    return SearchResult(sols[best], float(objs[best]), state.log, objs, sols, state.n_constructions, best,
                        state.theta)


def parallel_restarts(instance: ProblemInstance, meta: MetaParams, config: SearchConfig,
                      alpha_override=None) -> SearchResult:
    config.validate()
    seeds, starts = restart_plan(instance, config)
    state = run_lanes(instance, meta, config.K, config.b, seeds, starts, config.K_feature, alpha_override)
    return _result(state)


def search(instance: ProblemInstance, meta: MetaParams, config: SearchConfig, alpha_override=None) -> SearchResult:
    """Single search (restart 0 of ``parallel_restarts``)."""
    cfg = SearchConfig(**{**config.__dict__, "M": 1})
    return parallel_restarts(instance, meta, cfg, alpha_override)
