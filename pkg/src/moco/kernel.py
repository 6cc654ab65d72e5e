"""Masked-softmax construction policy for TSP and MIS, one state at a time.

This is the reference semantics; ``rollout`` implements the same process
vectorized over many samples and is tested against it.

A TSP solution is represented as its tour (node order starting at the start
node). Forced fallback arcs and the closing arc may be missing from a sparse
graph, so a bitset over decision edges cannot always describe a tour; both
representations are accepted where possible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, DeadEnd, InfeasibleSolutionError, InvalidParameterError
from .graph import Kind, ProblemInstance


@dataclass(frozen=True, eq=False)
class ConstructionState:
    instance: ProblemInstance
    x: np.ndarray
    t: int
    terminal: bool
    # TSP
    start_node: int = -1
    current_node: int = -1
    visited: np.ndarray | None = None
    tour: tuple = ()
    forced_arcs: tuple = ()
    # MIS
    blocked: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, ConstructionState):
            return NotImplemented
        same = (self.instance == other.instance and self.t == other.t and self.terminal == other.terminal
                and self.start_node == other.start_node and self.current_node == other.current_node
                and self.tour == other.tour and self.forced_arcs == other.forced_arcs
                and np.array_equal(self.x, other.x))
        if self.instance.kind is Kind.MIS:
            same = same and np.array_equal(self.blocked, other.blocked)
        return same

    __hash__ = None

    @property
    def selected(self) -> np.ndarray:
        """MIS: indices of the chosen nodes."""
        return np.flatnonzero(self.x)


def initial_state(instance: ProblemInstance, start_node: int = 0) -> ConstructionState:
    x = np.zeros(instance.n_decisions, dtype=bool)
    if instance.kind is Kind.TSP:
        if not 0 <= start_node < instance.n_nodes:
            raise InvalidParameterError(f"start node {start_node} out of range")
        visited = np.zeros(instance.n_nodes, dtype=bool)
        visited[start_node] = True
        return ConstructionState(instance, x, 0, False, start_node=start_node, current_node=start_node,
                                 visited=visited, tour=(start_node,))
    blocked = np.zeros(instance.n_nodes, dtype=bool)
    return ConstructionState(instance, x, 0, instance.n_nodes == 0, blocked=blocked)


def feasible_actions(state: ConstructionState) -> np.ndarray:
    """Boolean mask over decision variables that may be set next."""
    if state.terminal:
        raise ContractViolation("no actions from a terminal state")
    inst = state.instance
    mask = np.zeros(inst.n_decisions, dtype=bool)
    if inst.kind is Kind.TSP:
        k = inst.degree
        c = state.current_node
        mask[c * k:(c + 1) * k] = ~state.visited[inst.out_neighbors[c]]
    else:
        mask = ~state.blocked & ~state.x
    return mask


def masked_softmax(theta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the entries where ``mask`` holds; exact zeros elsewhere."""
    p = np.zeros(theta.shape, dtype=np.float64)
    if not mask.any():
        return p
    vals = np.asarray(theta, dtype=np.float64)[mask]
    w = np.exp(vals - vals.max())
    p[mask] = w / w.sum()
    return p


def action_probabilities(theta, state: ConstructionState) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (state.instance.n_decisions,):
        raise ContractViolation(f"heatmap length {theta.shape} != {state.instance.n_decisions}")
    mask = feasible_actions(state)
    if not mask.any():
        raise DeadEnd("no feasible sparse successor")
    return masked_softmax(theta, mask)


def fallback_target(state: ConstructionState) -> int:
    """Nearest unvisited node by true distance (ties to the lower index)."""
    inst = state.instance
    d = inst.distances_from(state.current_node)
    d = np.where(state.visited, np.inf, d)
    return int(np.argmin(d))


def _advance_tsp(state: ConstructionState, target: int, decision: int | None) -> ConstructionState:
    inst = state.instance
    visited = state.visited.copy()
    visited[target] = True
    x = state.x
    forced = state.forced_arcs
    if decision is None:
        forced = forced + ((state.current_node, target),)
    else:
        x = x.copy()
        x[decision] = True
    tour = state.tour + (target,)
    return replace(state, x=x, t=state.t + 1, current_node=target, visited=visited, tour=tour,
                   forced_arcs=forced, terminal=len(tour) == inst.n_nodes)


def apply_action(state: ConstructionState, a: int) -> ConstructionState:
    mask = feasible_actions(state)
    if not (0 <= a < len(mask)) or not mask[a]:
        raise ContractViolation(f"action {a} is not feasible")
    inst = state.instance
    if inst.kind is Kind.TSP:
        return _advance_tsp(state, int(inst.edges[a, 1]), a)
    x = state.x.copy()
    x[a] = True
    blocked = state.blocked.copy()
    blocked[a] = True
    blocked[inst.adjacency[a]] = True
    return replace(state, x=x, blocked=blocked, t=state.t + 1, terminal=bool(blocked.all()))


def apply_fallback(state: ConstructionState) -> ConstructionState:
    """Take the forced arc out of a TSP dead end."""
    if state.instance.kind is not Kind.TSP:
        raise ContractViolation("fallback arcs only exist for TSP")
    if feasible_actions(state).any():
        raise ContractViolation("fallback taken while sparse actions remain")
    return _advance_tsp(state, fallback_target(state), None)


def solution_of(state: ConstructionState):
    if not state.terminal:
        raise ContractViolation("construction not finished")
    if state.instance.kind is Kind.TSP:
        return np.array(state.tour, dtype=np.int64)
    return state.x.copy()


# ---- objective & feasibility --------------------------------------------


def tour_lengths(coords: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """Closed-tour lengths of a (B, n) batch of node orders."""
    pts = coords[tours]
    seg = np.roll(pts, -1, axis=1) - pts
    return np.sqrt((seg ** 2).sum(-1)).sum(-1)


def _tour_from_bitset(instance: ProblemInstance, x: np.ndarray):
    """Tour encoded by a TSP edge bitset, or a reason string if it is not one cycle."""
    n = instance.n_nodes
    chosen = instance.edges[np.flatnonzero(x)]
    if len(chosen) != n:
        return f"{len(chosen)} edges chosen, a tour needs {n}"
    succ = np.full(n, -1)
    for u, v in chosen:
        if succ[u] != -1:
            return f"node {u} has two outgoing edges"
        succ[u] = v
    tour = [0]
    for _ in range(n - 1):
        nxt = int(succ[tour[-1]])
        if nxt in tour:
            return f"subtour closes at node {nxt}"
        tour.append(nxt)
    if succ[tour[-1]] != 0:
        return "edges do not close a Hamiltonian cycle"
    return np.array(tour)


def _tsp_tour(instance: ProblemInstance, x):
    x = np.asarray(x)
    n = instance.n_nodes
    # bool arrays, or anything of decision length that cannot be a tour, are edge bitsets
    if x.dtype == bool or (x.ndim == 1 and len(x) == instance.n_decisions != n):
        if x.shape != (instance.n_decisions,):
            return f"bitset length {x.shape} != {instance.n_decisions}"
        if not np.isin(x, (0, 1)).all():
            return "bitset entries must be 0/1"
        return _tour_from_bitset(instance, x.astype(bool))
    if x.ndim != 1 or len(x) != n:
        return f"tour must list {n} nodes"
    if not np.issubdtype(x.dtype, np.integer):
        return "tour entries must be node ids"
    if x.min() < 0 or x.max() >= n:
        return "node id out of range"
    counts = np.bincount(x, minlength=n)
    if counts.max() > 1:
        return f"node {int(np.argmax(counts))} visited twice"
    return x


def _mis_violation(instance: ProblemInstance, x):
    x = np.asarray(x)
    if x.shape != (instance.n_nodes,):
        return f"bitset length {x.shape} != {instance.n_nodes}"
    if not np.isin(x, (0, 1)).all():
        return "entries must be 0/1"
    x = x.astype(bool)
    e = instance.mis_edges
    bad = x[e[:, 0]] & x[e[:, 1]]
    if bad.any():
        u, v = e[np.argmax(bad)]
        return f"adjacent nodes {u} and {v} both selected"
    return None


def is_feasible(instance: ProblemInstance, x) -> bool:
    try:
        if instance.kind is Kind.TSP:
            return not isinstance(_tsp_tour(instance, x), str)
        return _mis_violation(instance, x) is None
    except (TypeError, ValueError, IndexError):
        return False


def objective(instance: ProblemInstance, x) -> float:
    """Minimization objective: tour length for TSP, negative set size for MIS."""
    if instance.kind is Kind.TSP:
        tour = _tsp_tour(instance, x)
        if isinstance(tour, str):
            raise InfeasibleSolutionError(tour)
        return float(tour_lengths(instance.coords, tour[None])[0])
    why = _mis_violation(instance, x)
    if why is not None:
        raise InfeasibleSolutionError(why)
    return -float(np.asarray(x).astype(bool).sum())


def reported_value(kind: Kind, f: float) -> float:
    """Objective as people quote it: tour length, or positive set size."""
    return -f if Kind(kind) is Kind.MIS else f


def is_feasible_batch(instance: ProblemInstance, xs: np.ndarray) -> np.ndarray:
    """Vectorized feasibility of (B, n) tours (TSP) or (B, n) bitsets (MIS)."""
    xs = np.asarray(xs)
    n = instance.n_nodes
    if xs.ndim != 2 or xs.shape[1] != n:
        return np.zeros(len(xs), dtype=bool)
    if instance.kind is Kind.TSP:
        in_range = (xs >= 0).all(1) & (xs < n).all(1)
        srt = np.sort(np.clip(xs, 0, n - 1), axis=1)
        return in_range & (srt == np.arange(n)).all(1)
    xb = xs.astype(bool)
    e = instance.mis_edges
    binary = np.isin(xs, (0, 1)).all(1)
    if len(e) == 0:
        return binary
    return binary & ~(xb[:, e[:, 0]] & xb[:, e[:, 1]]).any(1)


def is_maximal_independent(instance: ProblemInstance, x) -> bool:
    x = np.asarray(x).astype(bool)
    covered = x | instance.adjacency[x].any(0)
    return bool(covered.all())


def tour_to_bitset(instance: ProblemInstance, tour) -> np.ndarray:
    """Decision edges used by a tour; arcs absent from the sparse graph are skipped."""
    tour = np.asarray(tour)
    ids = instance.edge_lookup[tour, np.roll(tour, -1)]
    x = np.zeros(instance.n_decisions, dtype=bool)
    x[ids[ids >= 0]] = True
    return x
