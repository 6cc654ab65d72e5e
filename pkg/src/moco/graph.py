"""Problem instances for TSP and MIS: generation, sparsification and file IO.

TSP instances are defined by their coordinates plus an optional k-NN degree;
the directed edge list is derived on demand so that huge complete graphs are
never materialized. Decision variable ``i`` of a TSP instance is the directed
edge ``edges[i]``; edges are grouped by source with a constant out-degree, so
``i = source * degree + rank``. MIS decision variables are the nodes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidInstanceError, InvalidParameterError, ParseError, WrongKindError

# dense distance matrices are never cached above this size
DENSE_CACHE_LIMIT = 2000


class Kind(str, Enum):
    TSP = "tsp"
    MIS = "mis"


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    kind: Kind
    n_nodes: int
    coords: np.ndarray | None = None
    mis_edges: np.ndarray | None = field(default=None, repr=False)
    k_nn: int | None = None
    seed: int | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.TSP:
            if self.coords is None:
                raise InvalidInstanceError("TSP instance needs coordinates")
            coords = np.array(self.coords, dtype=np.float64)
            if coords.shape != (self.n_nodes, 2):
                raise InvalidInstanceError(f"coords shape {coords.shape} != ({self.n_nodes}, 2)")
            if not np.all(np.isfinite(coords)):
                raise InvalidInstanceError("non-finite coordinate")
            if self.n_nodes < 3:
                raise InvalidInstanceError("TSP needs at least 3 nodes")
            if self.k_nn is not None and self.k_nn < 1:
                raise InvalidParameterError("k_nn must be >= 1")
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)
        else:
            if self.n_nodes < 1:
                raise InvalidInstanceError("MIS needs at least 1 node")
            edges = np.zeros((0, 2), dtype=np.int64) if self.mis_edges is None else np.asarray(self.mis_edges)
            edges = _normalize_undirected(edges.astype(np.int64).reshape(-1, 2), self.n_nodes)
            edges.setflags(write=False)
            object.__setattr__(self, "mis_edges", edges)
            object.__setattr__(self, "coords", None)

    # ---- topology -------------------------------------------------------

    @property
    def degree(self) -> int:
        """Out-degree of every node in the TSP graph."""
        self._require(Kind.TSP)
        full = self.n_nodes - 1
        return full if self.k_nn is None else min(self.k_nn, full)

    @cached_property
    def out_neighbors(self) -> np.ndarray:
        """(n, degree) targets; row i lists the out-neighbors of node i in edge-id order."""
        self._require(Kind.TSP)
        n = self.n_nodes
        if self.k_nn is None:
            cols = np.arange(n - 1, dtype=np.int64)[None, :]
            table = cols + (cols >= np.arange(n)[:, None])
        else:
            table = knn_table(self.coords, self.degree)
        table.setflags(write=False)
        return table

    @cached_property
    def edges(self) -> np.ndarray:
        """Directed edge list (E, 2); row i is decision variable i for TSP."""
        if self.kind is Kind.MIS:
            return self.mis_edges
        nb = self.out_neighbors
        src = np.repeat(np.arange(self.n_nodes), nb.shape[1])
        e = np.stack([src, nb.reshape(-1)], axis=1)
        e.setflags(write=False)
        return e

    @property
    def n_decisions(self) -> int:
        if self.kind is Kind.TSP:
            return self.n_nodes * self.degree
        return self.n_nodes

    @cached_property
    def edge_lookup(self) -> np.ndarray:
        """(n, n) table mapping a directed TSP arc to its decision id, -1 if absent."""
        self._require(Kind.TSP)
        n = self.n_nodes
        table = np.full((n, n), -1, dtype=np.int64)
        nb = self.out_neighbors
        table[np.repeat(np.arange(n), nb.shape[1]), nb.reshape(-1)] = np.arange(nb.size)
        table.setflags(write=False)
        return table

    def decision_to_edge(self, i: int) -> tuple[int, int]:
        self._require(Kind.TSP)
        u, v = self.edges[i]
        return int(u), int(v)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Dense boolean adjacency of an MIS graph."""
        self._require(Kind.MIS)
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        adj[self.mis_edges[:, 0], self.mis_edges[:, 1]] = True
        adj.setflags(write=False)
        return adj

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) neighbor lists of an MIS graph."""
        self._require(Kind.MIS)
        counts = np.bincount(self.mis_edges[:, 0], minlength=self.n_nodes)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return indptr, self.mis_edges[:, 1].copy()

    @property
    def n_undirected_edges(self) -> int:
        self._require(Kind.MIS)
        return len(self.mis_edges) // 2

    # ---- distances ------------------------------------------------------

    def distances_from(self, i, targets=None) -> np.ndarray:
        self._require(Kind.TSP)
        tgt = self.coords if targets is None else self.coords[targets]
        return np.sqrt(((tgt - self.coords[i]) ** 2).sum(-1))

    def dense_distances(self) -> np.ndarray:
        """Full Euclidean distance matrix, cached for n <= DENSE_CACHE_LIMIT."""
        self._require(Kind.TSP)
        cached = self.__dict__.get("_dense")
        if cached is not None:
            return cached
        d = pairwise_distances(self.coords)
        if self.n_nodes <= DENSE_CACHE_LIMIT:
            d.setflags(write=False)
            self.__dict__["_dense"] = d
        return d

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """Distance of every TSP decision edge."""
        e = self.edges
        return np.sqrt(((self.coords[e[:, 0]] - self.coords[e[:, 1]]) ** 2).sum(-1))

    # ---- misc -----------------------------------------------------------

    def _require(self, kind: Kind):
        if self.kind is not kind:
            raise WrongKindError(f"operation requires a {kind.value} instance, got {self.kind.value}")

    def __eq__(self, other):
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        if self.kind is not other.kind or self.n_nodes != other.n_nodes:
            return False
        if self.kind is Kind.TSP:
            return self.k_nn == other.k_nn and np.array_equal(self.coords, other.coords)
        return np.array_equal(self.mis_edges, other.mis_edges)

    __hash__ = object.__hash__

    def relabel(self, perm) -> ProblemInstance:
        """Instance with node ``i`` renamed to ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        if self.kind is Kind.TSP:
            return ProblemInstance(Kind.TSP, self.n_nodes, coords=self.coords[inv], k_nn=self.k_nn, seed=self.seed)
        return ProblemInstance(Kind.MIS, self.n_nodes, mis_edges=perm[self.mis_edges], seed=self.seed)


def _normalize_undirected(edges: np.ndarray, n: int) -> np.ndarray:
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise InvalidInstanceError("edge endpoint out of range")
    edges = edges[edges[:, 0] != edges[:, 1]]
    both = np.concatenate([edges, edges[:, ::-1]])
    if len(both) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    both = np.unique(both, axis=0)
    return both


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def knn_table(coords: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """k nearest neighbors of every node, nearest first, ties to the lower index."""
    n = len(coords)
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d = np.sqrt(((coords[lo:hi, None, :] - coords[None, :, :]) ** 2).sum(-1))
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        out[lo:hi] = order[:, :k]
    return out


# ---- generators ---------------------------------------------------------


def generate_uniform_tsp(n: int, seed: int) -> ProblemInstance:
    if n < 3:
        raise InvalidInstanceError("TSP needs at least 3 nodes")
    rng = np.random.default_rng(seed)
    return ProblemInstance(Kind.TSP, n, coords=rng.random((n, 2)), seed=seed)


def generate_er_graph(n_min: int, n_max: int, p: float, seed: int) -> ProblemInstance:
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"edge probability {p} outside [0, 1]")
    if not 1 <= n_min <= n_max:
        raise InvalidParameterError("need 1 <= n_min <= n_max")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_min, n_max + 1))
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return ProblemInstance(Kind.MIS, n, mis_edges=edges, seed=seed)


def sparsify_knn(instance: ProblemInstance, k_nn: int) -> ProblemInstance:
    if instance.kind is not Kind.TSP:
        raise WrongKindError("k-NN sparsification only applies to TSP instances")
    if k_nn < 1:
        raise InvalidParameterError("k_nn must be >= 1")
    return ProblemInstance(Kind.TSP, instance.n_nodes, coords=instance.coords, k_nn=k_nn,
                           seed=instance.seed, name=instance.name)


# ---- file formats -------------------------------------------------------

TSPLIB = "tsplib-euc2d"
DIMACS = "dimacs-edge"


def save_instance(instance: ProblemInstance, path, format: str | None = None):
    format = format or (TSPLIB if instance.kind is Kind.TSP else DIMACS)
    path = Path(path)
    if format == TSPLIB:
        instance._require(Kind.TSP)
        lines = [f"NAME : {instance.name or path.stem}"]
        if instance.seed is not None:
            lines.append(f"COMMENT : seed={instance.seed}")
        lines += ["TYPE : TSP", f"DIMENSION : {instance.n_nodes}", "EDGE_WEIGHT_TYPE : EUC_2D",
                  "NODE_COORD_SECTION"]
        lines += [f"{i + 1} {x!r} {y!r}" for i, (x, y) in enumerate(instance.coords.tolist())]
        lines.append("EOF")
    elif format == DIMACS:
        instance._require(Kind.MIS)
        und = instance.mis_edges[instance.mis_edges[:, 0] < instance.mis_edges[:, 1]]
        lines = []
        if instance.seed is not None:
            lines.append(f"c seed={instance.seed}")
        lines.append(f"p edge {instance.n_nodes} {len(und)}")
        lines += [f"e {u + 1} {v + 1}" for u, v in und.tolist()]
    else:
        raise InvalidParameterError(f"unknown instance format {format!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instance(path, format: str | None = None) -> ProblemInstance:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if format is None:
        format = DIMACS if path.suffix in (".dimacs", ".col", ".graph", ".mis") else TSPLIB
    if format == TSPLIB:
        return parse_tsplib(text, name=path.stem)
    if format == DIMACS:
        return parse_dimacs(text)
    raise InvalidParameterError(f"unknown instance format {format!r}")


def _parse_seed(value: str):
    for tok in value.split():
        if tok.startswith("seed="):
            try:
                return int(tok[5:])
            except ValueError:
                return None
    return None


def parse_tsplib(text: str, name: str = "") -> ProblemInstance:
    header = {}
    coords = None
    seed = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line == "EOF":
            break
        if line.startswith("NODE_COORD_SECTION"):
            if "DIMENSION" not in header:
                raise ParseError("NODE_COORD_SECTION before DIMENSION", lineno)
            n = header["DIMENSION"]
            coords = np.empty((n, 2))
            for k in range(n):
                if i >= len(lines):
                    raise ParseError(f"expected {n} coordinate lines, file ended after {k}", i + 1)
                parts = lines[i].split()
                lineno = i + 1
                i += 1
                if len(parts) != 3 or parts[0] == "EOF":
                    raise ParseError(f"expected 'index x y', got {lines[i - 1].strip()!r}", lineno)
                try:
                    idx, x, y = int(parts[0]), float(parts[1]), float(parts[2])
                except ValueError:
                    raise ParseError(f"bad coordinate line {lines[i - 1].strip()!r}", lineno) from None
                if idx != k + 1:
                    raise ParseError(f"node index {idx} out of order (expected {k + 1})", lineno)
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise InvalidInstanceError(f"line {lineno}: non-finite coordinate")
                coords[k] = (x, y)
            continue
        if ":" not in line:
            raise ParseError(f"malformed header line {line!r}", lineno)
        key, value = (s.strip() for s in line.split(":", 1))
        if key == "DIMENSION":
            try:
                header[key] = int(value)
            except ValueError:
                raise ParseError(f"bad DIMENSION {value!r}", lineno) from None
        elif key == "TYPE" and value != "TSP":
            raise ParseError(f"unsupported TYPE {value!r}", lineno)
        elif key == "EDGE_WEIGHT_TYPE" and value != "EUC_2D":
            raise ParseError(f"unsupported EDGE_WEIGHT_TYPE {value!r}", lineno)
        elif key == "COMMENT":
            seed = _parse_seed(value)
        else:
            header[key] = value
    if coords is None:
        raise ParseError("missing NODE_COORD_SECTION", len(lines))
    return ProblemInstance(Kind.TSP, len(coords), coords=coords, seed=seed, name=header.get("NAME", name))


def parse_dimacs(text: str) -> ProblemInstance:
    n = m = None
    edges = []
    seed = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "c":
            seed = _parse_seed(" ".join(parts[1:])) if seed is None else seed
        elif tag == "p":
            if len(parts) != 4 or parts[1] != "edge":
                raise ParseError(f"malformed problem line {raw.strip()!r}", lineno)
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError(f"malformed problem line {raw.strip()!r}", lineno) from None
        elif tag == "e":
            if n is None:
                raise ParseError("edge line before problem line", lineno)
            if len(parts) != 3:
                raise ParseError(f"malformed edge line {raw.strip()!r}", lineno)
            try:
                u, v = int(parts[1]), int(parts[2])
            except ValueError:
                raise ParseError(f"malformed edge line {raw.strip()!r}", lineno) from None
            if not (1 <= u <= n and 1 <= v <= n):
                raise ParseError(f"edge endpoint out of range 1..{n}", lineno)
            edges.append((u - 1, v - 1))
        else:
            raise ParseError(f"unknown line type {tag!r}", lineno)
    if n is None:
        raise ParseError("missing problem line", None)
    if len(edges) != m:
        raise ParseError(f"header declares {m} edges, found {len(edges)}", None)
    return ProblemInstance(Kind.MIS, n, mis_edges=np.array(edges, dtype=np.int64).reshape(-1, 2), seed=seed)


# ---- dataset manifests --------------------------------------------------


def write_manifest(path, kind: Kind, instance_paths):
    path = Path(path)
    rel = [os.path.relpath(p, path.parent) for p in instance_paths]
    lines = [f"# kind={Kind(kind).value} count={len(rel)}"] + rel
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[Kind, list[Path]]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ParseError("manifest header missing", 1)
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split() if "=" in tok)
    try:
        kind = Kind(meta["kind"])
        count = int(meta["count"])
    except (KeyError, ValueError):
        raise ParseError(f"bad manifest header {lines[0]!r}", 1) from None
    paths = [path.parent / ln.strip() for ln in lines[1:] if ln.strip()]
    if len(paths) != count:
        raise ParseError(f"manifest declares {count} instances, lists {len(paths)}", None)
    return kind, paths


def load_dataset(manifest_path) -> tuple[Kind, list[ProblemInstance]]:
    kind, paths = read_manifest(manifest_path)
    fmt = TSPLIB if kind is Kind.TSP else DIMACS
    return kind, [load_instance(p, fmt) for p in paths]


def read_coordinate_lines(path) -> list[ProblemInstance]:
    """TSP instances stored one per line as ``x1 y1 x2 y2 ... [output tour...]``."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        toks = line.split()
        if not toks:
            continue
        if "output" in toks:
            toks = toks[:toks.index("output")]
        try:
            vals = np.array([float(t) for t in toks])
        except ValueError:
            raise ParseError("non-numeric coordinate", lineno) from None
        if len(vals) % 2 or len(vals) < 6:
            raise ParseError(f"expected an even number (>= 6) of coordinates, got {len(vals)}", lineno)
        out.append(ProblemInstance(Kind.TSP, len(vals) // 2, coords=vals.reshape(-1, 2), name=f"line{lineno}"))
    return out
