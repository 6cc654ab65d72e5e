"""Feature graphs fed to the init and update networks.

Update-phase decision features (one row per decision variable, 40 columns):
heatmap value, standardized gradient, 6 standardized momenta and 32 archive
membership flags. Global features (45): 32 normalized objective gaps of the
archived solutions, the relative improvement of the best objective, 11 tanh
time embeddings and the budget fraction k/K. TSP graphs additionally carry
edge distances and a start-node flag; MIS graphs a constant node feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .gnn import GLOBAL_WIDTH, UPDATE_DECISION_WIDTH, Topology
from .graph import Kind, ProblemInstance
from .rollout import ARCHIVE_SIZE, BETAS

TIMESCALES = (1, 3, 10, 30, 100, 300, 1000, 3000, 10000, 30000, 100000)
STD_EPS = 1e-8

DECISION_COLUMNS = (["theta", "grad"] + [f"momentum_{b:g}" for b in BETAS]
                    + [f"member_{l}" for l in range(ARCHIVE_SIZE)])
GLOBAL_COLUMNS = ([f"gap_{l}" for l in range(ARCHIVE_SIZE)] + ["rel_improvement"]
                  + [f"tanh_t{t}" for t in TIMESCALES] + ["k_over_K"])
assert len(DECISION_COLUMNS) == UPDATE_DECISION_WIDTH and len(GLOBAL_COLUMNS) == GLOBAL_WIDTH


def topology_of(instance: ProblemInstance) -> Topology:
    topo = instance.__dict__.get("_topology")
    if topo is None:
        e = instance.edges
        topo = Topology(instance.n_nodes, e[:, 0], e[:, 1])
        instance.__dict__["_topology"] = topo
    return topo


@dataclass
class FeatureGraph:
    """Inputs of one network call; every array has a leading lane axis."""

    kind: Kind
    phase: str
    topology: Topology
    node_features: np.ndarray
    edge_features: np.ndarray | None = None
    decision_features: np.ndarray | None = None
    global_features: np.ndarray | None = None

    def edge_inputs(self):
        if self.kind is not Kind.TSP:
            return None
        if self.decision_features is None:
            return self.edge_features
        return _concat(self.decision_features, self.edge_features)

    def node_inputs(self):
        if self.kind is Kind.MIS and self.decision_features is not None:
            return _concat(self.decision_features, self.node_features)
        return self.node_features

    def manifest(self) -> list[tuple[str, str, int]]:
        """(group, column, width) rows describing every input column."""
        rows = []
        if self.decision_features is not None:
            where = "edge" if self.kind is Kind.TSP else "node"
            rows += [(f"decision[{where}]", c, 1) for c in DECISION_COLUMNS]
        if self.kind is Kind.TSP:
            rows += [("edge", "distance", 1), ("node", "start_flag", 1)]
        else:
            rows += [("node", "constant_one", 1)]
        if self.global_features is not None:
            rows += [("global", c, 1) for c in GLOBAL_COLUMNS]
        return rows


def _concat(a, b):
    L = max(a.shape[0], b.shape[0])
    a = np.broadcast_to(a, (L,) + a.shape[1:])
    b = np.broadcast_to(b, (L,) + b.shape[1:])
    return np.concatenate([a, b], axis=-1)


def _instance_features(instance: ProblemInstance, start_nodes):
    if instance.kind is Kind.TSP:
        if start_nodes is None:
            raise ContractViolation("TSP feature graphs need the start node of each lane")
        starts = np.atleast_1d(np.asarray(start_nodes))
        flags = np.zeros((len(starts), instance.n_nodes, 1), dtype=np.float32)
        flags[np.arange(len(starts)), starts, 0] = 1.0
        dist = instance.edge_lengths.astype(np.float32)[None, :, None]
        return flags, dist
    return np.ones((1, instance.n_nodes, 1), dtype=np.float32), None


def build_init_graph(instance: ProblemInstance, start_nodes=None) -> FeatureGraph:
    nodes, edges = _instance_features(instance, start_nodes)
    return FeatureGraph(instance.kind, "init", topology_of(instance), nodes, edges)


def tanh_time_embedding(k: float) -> np.ndarray:
    if k < 0:
        raise ContractViolation("iteration must be >= 0")
    return np.tanh(k / np.asarray(TIMESCALES, dtype=np.float64) - 1.0)


def standardize(v: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over the last axis."""
    mean = v.mean(-1, keepdims=True)
    std = v.std(-1, keepdims=True)
    return (v - mean) / (std + STD_EPS)


def archive_globals(archive) -> np.ndarray:
    """Normalized gaps of the L archived objectives plus the relative improvement."""
    out = np.zeros(ARCHIVE_SIZE + 1)
    if len(archive) == 0:
        raise ContractViolation("archive is empty")
    best = archive.best_objective
    scale = abs(best)
    if scale > 0:
        objs = archive.objectives
        out[:len(objs)] = (objs - best) / scale
        if archive.prev_best is not None:
            out[ARCHIVE_SIZE] = (archive.prev_best - best) / scale
    return out


def build_update_features(instance, thetas, grads, momenta, archives, k, K_feature, start_nodes=None):
    """Update-phase FeatureGraph for L lanes.

    thetas, grads: (L, N); momenta: (len(BETAS), L, N); archives: L archives.
    """
    thetas = np.atleast_2d(thetas)
    L, N = thetas.shape
    dec = np.zeros((L, N, UPDATE_DECISION_WIDTH), dtype=np.float32)
    dec[:, :, 0] = thetas
    dec[:, :, 1] = standardize(np.atleast_2d(grads))
    dec[:, :, 2:2 + len(BETAS)] = standardize(momenta).transpose(1, 2, 0)
    glob = np.zeros((L, GLOBAL_WIDTH), dtype=np.float32)
    time_feats = np.concatenate([tanh_time_embedding(k), [k / K_feature]])
    off = 2 + len(BETAS)
    for lane, arch in enumerate(archives):
        for l, entry in enumerate(arch.entries):
            dec[lane, :, off + l] = entry.membership
        glob[lane, :ARCHIVE_SIZE + 1] = archive_globals(arch)
        glob[lane, ARCHIVE_SIZE + 1:] = time_feats
    nodes, edges = _instance_features(instance, start_nodes)
    return FeatureGraph(instance.kind, "update", topology_of(instance), nodes, edges, dec, glob)


def build_update_graph(search_state) -> FeatureGraph:
    """Update-phase features of a (possibly multi-lane) search state."""
    s = search_state
    return build_update_features(s.instance, s.theta, s.grad.grad, s.grad.momenta, s.archives, s.k,
                                 s.K_feature, s.start_nodes)


def feature_manifest(kind: Kind, phase: str) -> list[tuple[str, str, int]]:
    """Column layout of a network's inputs without building a graph."""
    kind = Kind(kind)
    rows = []
    if phase == "update":
        where = "edge" if kind is Kind.TSP else "node"
        rows += [(f"decision[{where}]", c, 1) for c in DECISION_COLUMNS]
    rows += [("edge", "distance", 1), ("node", "start_flag", 1)] if kind is Kind.TSP else [("node", "constant_one", 1)]
    if phase == "update":
        rows += [("global", c, 1) for c in GLOBAL_COLUMNS]
    return rows
