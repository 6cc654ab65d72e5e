"""Forward-only graph networks that initialize and update the heatmap.

TSP uses a GraphNetwork block stack (edge -> node -> global updates with
residual connections), MIS a residual GCN with max aggregation and optional
global stream. Weights are stored as ``(out, in)`` matrices. Every array may
carry a leading *lane* axis so that many parameter sets (ES perturbations)
or feature sets (restarts) run through one batched forward pass.

All network math is float32; reductions over graph elements (aggregation,
layer-norm statistics, global sums) accumulate in float64 so that results do
not depend on node or edge order.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, CorruptCheckpointError, InvalidParameterError
from .graph import Kind

D_HIDDEN = 128
N_BLOCKS = 3
LN_EPS = 1e-5
ALPHA_EPS = 1e-6

# input widths; see features.py for column meanings
UPDATE_DECISION_WIDTH = 40
GLOBAL_WIDTH = 45
PHASES = ("init", "update")


def input_widths(kind: Kind, phase: str) -> dict:
    kind = Kind(kind)
    if kind is Kind.TSP:
        if phase == "init":
            return {"edge": 1, "node": 1}
        return {"edge": UPDATE_DECISION_WIDTH + 1, "node": 1, "global": GLOBAL_WIDTH}
    if phase == "init":
        return {"node": 1}
    return {"node": UPDATE_DECISION_WIDTH + 1, "global": GLOBAL_WIDTH}


def shape_manifest(kind: Kind, phase: str, d: int = D_HIDDEN, n_blocks: int = N_BLOCKS) -> list:
    """Ordered (name, shape) list of every weight array of one network."""
    if phase not in PHASES:
        raise InvalidParameterError(f"unknown phase {phase!r}")
    kind = Kind(kind)
    widths = input_widths(kind, phase)
    glob = "global" in widths
    out = []
    for stream, w in widths.items():
        out += [(f"embed_{stream}.W", (d, w)), (f"embed_{stream}.b", (d,))]
    for l in range(n_blocks):
        p = f"block{l}."
        if kind is Kind.TSP:
            cat = 4 if glob else 3
            out += [(p + "W_e", (d, cat * d)), (p + "b_e", (d,)),
                    (p + "W_v", (d, cat * d)), (p + "b_v", (d,))]
            if glob:
                out += [(p + "W_g", (d, 3 * d)), (p + "b_g", (d,))]
        else:
            out += [(p + "W_1", (d, d)), (p + "b_1", (d,)), (p + "W_2", (d, d)), (p + "b_2", (d,))]
            if glob:
                out += [(p + "W_3", (d, 2 * d)), (p + "b_3", (d,)), (p + "W_4", (d, d)), (p + "b_4", (d,))]
    out += [("decode_theta.W", (1, d)), ("decode_theta.b", (1,))]
    if glob:
        out += [("decode_alpha.W", (1, d)), ("decode_alpha.b", (1,))]
    return out


@dataclass
class GnnParams:
    kind: Kind
    phase: str
    arrays: dict
    d_hidden: int = D_HIDDEN
    n_blocks: int = N_BLOCKS

    def __post_init__(self):
        self.kind = Kind(self.kind)

    @property
    def manifest(self) -> list:
        return shape_manifest(self.kind, self.phase, self.d_hidden, self.n_blocks)

    @property
    def n_lanes(self) -> int | None:
        """Leading lane count for stacked parameters, None when unstacked."""
        name, shape = self.manifest[0]
        a = self.arrays[name]
        return a.shape[0] if a.ndim == len(shape) + 1 else None

    @property
    def size(self) -> int:
        return int(sum(np.prod(s) for _, s in self.manifest))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].reshape(-1) for n, _ in self.manifest])

    @classmethod
    def unflatten(cls, kind, phase, vec, d_hidden=D_HIDDEN, n_blocks=N_BLOCKS) -> GnnParams:
        """Inverse of ``flatten``; a 2-D ``vec`` (S, size) gives stacked lanes."""
        vec = np.asarray(vec, dtype=np.float32)
        lead = vec.shape[:-1]
        arrays = {}
        pos = 0
        for name, shape in shape_manifest(kind, phase, d_hidden, n_blocks):
            size = int(np.prod(shape))
            arrays[name] = vec[..., pos:pos + size].reshape(lead + tuple(shape))
            pos += size
        if pos != vec.shape[-1]:
            raise ContractViolation(f"flat vector has {vec.shape[-1]} entries, manifest needs {pos}")
        return cls(kind, phase, arrays, d_hidden, n_blocks)

    def check(self):
        for name, shape in self.manifest:
            a = self.arrays.get(name)
            if a is None or tuple(a.shape[-len(shape):]) != tuple(shape):
                raise ContractViolation(f"{name}: expected shape {shape}, got {None if a is None else a.shape}")


def init_params(seed: int, kind: Kind, phase: str, zero: bool = False, d_hidden: int = D_HIDDEN,
                n_blocks: int = N_BLOCKS) -> GnnParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases; all zeros when ``zero``."""
    rng = np.random.default_rng([seed, PHASES.index(phase)])
    arrays = {}
    for name, shape in shape_manifest(kind, phase, d_hidden, n_blocks):
        if zero or len(shape) == 1:
            arrays[name] = np.zeros(shape, dtype=np.float32)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return GnnParams(kind, phase, arrays, d_hidden, n_blocks)


@dataclass
class MetaParams:
    """Both networks of the meta-optimizer."""

    init: GnnParams
    update: GnnParams
    metadata: dict = field(default_factory=dict)

    @property
    def kind(self) -> Kind:
        return self.init.kind

    @property
    def size(self) -> int:
        return self.init.size + self.update.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.init.flatten(), self.update.flatten()])

    @classmethod
    def unflatten(cls, kind, vec, d_hidden=D_HIDDEN, n_blocks=N_BLOCKS, metadata=None) -> MetaParams:
        vec = np.asarray(vec, dtype=np.float32)
        n_init = sum(int(np.prod(s)) for _, s in shape_manifest(kind, "init", d_hidden, n_blocks))
        return cls(GnnParams.unflatten(kind, "init", vec[..., :n_init], d_hidden, n_blocks),
                   GnnParams.unflatten(kind, "update", vec[..., n_init:], d_hidden, n_blocks),
                   dict(metadata or {}))

    @classmethod
    def initialize(cls, seed: int, kind: Kind, zero: bool = False, d_hidden: int = D_HIDDEN) -> MetaParams:
        return cls(init_params(seed, kind, "init", zero, d_hidden), init_params(seed, kind, "update", zero, d_hidden),
                   {"seed": seed})


# ---- building blocks ----------------------------------------------------


def relu(x):
    return np.maximum(x, 0)


def softplus(x):
    return np.logaddexp(0, x)


def layer_norm(x: np.ndarray, axis: int = -2) -> np.ndarray:
    """Normalize every feature over the set of graph elements along ``axis``."""
    mean = x.mean(axis=axis, keepdims=True, dtype=np.float64)
    c = x - mean
    var = (c * c).mean(axis=axis, keepdims=True)
    return (c / np.sqrt(var + LN_EPS)).astype(x.dtype)


def _lin(x: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """x (L, M, in) times W^T for W of shape (out, in) or lane-stacked (S, out, in)."""
    if W.ndim == 3:
        y = np.matmul(x, W.transpose(0, 2, 1))
        if b is not None:
            y = y + b[:, None, :]
    else:
        y = x @ W.T
        if b is not None:
            y = y + b
    return y


def _cols(W: np.ndarray, i: int, d: int) -> np.ndarray:
    return W[..., i * d:(i + 1) * d]


def _global_lin(g: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """(L, in) globals through a linear layer, returning (L, 1, out)."""
    return _lin(g[:, None, :], W, b)


class Topology:
    """Cached scatter structure of one graph."""

    def __init__(self, n_nodes: int, senders: np.ndarray, receivers: np.ndarray):
        self.n_nodes = n_nodes
        self.senders = np.asarray(senders, dtype=np.int64)
        self.receivers = np.asarray(receivers, dtype=np.int64)
        E = len(self.senders)
        ones = np.ones(E, dtype=np.float64)
        self.out_incidence = sp.csr_matrix((ones, (self.senders, np.arange(E))), shape=(n_nodes, E))
        self.in_incidence = sp.csr_matrix((ones, (self.receivers, np.arange(E))), shape=(n_nodes, E))
        # neighbor lists grouped by receiving node, for max aggregation
        order = np.lexsort((self.senders, self.receivers))
        self.nbr_src = self.senders[order]
        counts = np.bincount(self.receivers, minlength=n_nodes)
        self.nbr_ptr = np.concatenate([[0], np.cumsum(counts)])
        self.has_nbr = counts > 0

    def scatter_sum(self, x: np.ndarray, incidence) -> np.ndarray:
        L, E, d = x.shape
        flat = np.ascontiguousarray(x.transpose(1, 0, 2), dtype=np.float64).reshape(E, L * d)
        out = incidence @ flat
        return np.asarray(out, dtype=x.dtype).reshape(self.n_nodes, L, d).transpose(1, 0, 2)

    def neighbor_max(self, x: np.ndarray) -> np.ndarray:
        """Element-wise max of x over each node's neighbors; zero for isolated nodes."""
        L, n, d = x.shape
        out = np.zeros_like(x)
        if len(self.nbr_src) == 0:
            return out
        gathered = x[:, self.nbr_src, :]
        starts = self.nbr_ptr[:-1][self.has_nbr]
        out[:, self.has_nbr, :] = np.maximum.reduceat(gathered, starts, axis=1)
        return out


def _sum_f32(x):
    return x.sum(1, dtype=np.float64).astype(np.float32)


def _lanes(x):
    return None if x is None else np.asarray(x, dtype=np.float32)


# ---- forward passes -----------------------------------------------------


def graphnet_forward(params: GnnParams, topo: Topology, edge_in, node_in, global_in=None):
    """GraphNetwork stack for TSP.

    Inputs are (L, E, F_e), (L, n, F_v) and optionally (L, F_g). Returns the
    final edge embeddings (L, E, d) and global embedding (L, d) or None.
    """
    A = params.arrays
    d = params.d_hidden
    glob = params.phase == "update"
    if glob != (global_in is not None):
        raise ContractViolation("global features must be given exactly for the update network")
    he = _lin(_lanes(edge_in), A["embed_edge.W"], A["embed_edge.b"])
    hv = _lin(_lanes(node_in), A["embed_node.W"], A["embed_node.b"])
    hg = _global_lin(_lanes(global_in), A["embed_global.W"], A["embed_global.b"])[:, 0] if glob else None
    s, r = topo.senders, topo.receivers
    for l in range(params.n_blocks):
        p = f"block{l}."
        We, Wv = A[p + "W_e"], A[p + "W_v"]
        # edge update
        pre = _lin(he, _cols(We, 0, d), A[p + "b_e"])
        pre = pre + _lin(hv, _cols(We, 1, d))[:, s] + _lin(hv, _cols(We, 2, d))[:, r]
        if glob:
            pre = pre + _global_lin(hg, _cols(We, 3, d))
        he = he + layer_norm(relu(pre))
        # node update
        out_sum = topo.scatter_sum(he, topo.out_incidence)
        in_sum = topo.scatter_sum(he, topo.in_incidence)
        pre = (_lin(hv, _cols(Wv, 0, d), A[p + "b_v"]) + _lin(out_sum, _cols(Wv, 1, d))
               + _lin(in_sum, _cols(Wv, 2, d)))
        if glob:
            pre = pre + _global_lin(hg, _cols(Wv, 3, d))
        hv = hv + layer_norm(relu(pre))
        # global update
        if glob:
            Wg = A[p + "W_g"]
            pre = (_global_lin(_sum_f32(hv), _cols(Wg, 0, d), A[p + "b_g"])
                   + _global_lin(_sum_f32(he), _cols(Wg, 1, d)) + _global_lin(hg, _cols(Wg, 2, d)))
            hg = hg + relu(pre[:, 0])
    return he, hg


def gcn_forward(params: GnnParams, topo: Topology, node_in, global_in=None):
    """Residual max-aggregation GCN for MIS; returns (L, n, d) nodes and (L, d) globals or None."""
    A = params.arrays
    d = params.d_hidden
    glob = params.phase == "update"
    if glob != (global_in is not None):
        raise ContractViolation("global features must be given exactly for the update network")
    hv = _lin(_lanes(node_in), A["embed_node.W"], A["embed_node.b"])
    hg = _global_lin(_lanes(global_in), A["embed_global.W"], A["embed_global.b"])[:, 0] if glob else None
    for l in range(params.n_blocks):
        p = f"block{l}."
        msg = _lin(hv, A[p + "W_2"], A[p + "b_2"])
        if msg.shape[0] != hv.shape[0]:
            hv = np.broadcast_to(hv, msg.shape)
        agg = topo.neighbor_max(msg)
        hv = hv + relu(_lin(hv, A[p + "W_1"], A[p + "b_1"]) + agg)
        if glob:
            W3 = A[p + "W_3"]
            hv = hv + relu(_global_lin(hg, _cols(W3, 0, d), A[p + "b_3"]) + _lin(hv, _cols(W3, 1, d)))
            hg = hg + relu(_global_lin(_sum_f32(hv), A[p + "W_4"], A[p + "b_4"])[:, 0])
    return hv, hg


def decode_theta(params: GnnParams, decision_out: np.ndarray, global_out: np.ndarray | None = None):
    """Linear heads: per-variable theta-tilde (L, N) and positive scale alpha (L,) or None."""
    A = params.arrays
    theta = _lin(decision_out, A["decode_theta.W"], A["decode_theta.b"])[..., 0]
    if global_out is None or "decode_alpha.W" not in A:
        return theta, None
    raw = _global_lin(global_out, A["decode_alpha.W"], A["decode_alpha.b"])[:, 0, 0]
    return theta, softplus(raw) + np.float32(ALPHA_EPS)


def forward(params: GnnParams, fg) -> tuple[np.ndarray, np.ndarray | None]:
    """Run the network matching ``params`` on a FeatureGraph and decode."""
    if Kind(fg.kind) is not params.kind or fg.phase != params.phase:
        raise ContractViolation(f"{params.kind.value}/{params.phase} network got a {fg.kind}/{fg.phase} graph")
    if params.kind is Kind.TSP:
        dec, g = graphnet_forward(params, fg.topology, fg.edge_inputs(), fg.node_inputs(), fg.global_features)
    else:
        dec, g = gcn_forward(params, fg.topology, fg.node_inputs(), fg.global_features)
    return decode_theta(params, dec, g)


# ---- checkpoints --------------------------------------------------------

MAGIC = b"MOCOCKPT"
FORMAT_VERSION = 1


class ShapeMismatchError(CorruptCheckpointError):
    pass


def _nets(params):
    if isinstance(params, MetaParams):
        return [params.init, params.update], dict(params.metadata)
    return [params], {}


def save_params(params, path, metadata: dict | None = None):
    """Write a checkpoint: JSON header, float32 little-endian arrays, CRC-32 trailer."""
    nets, meta = _nets(params)
    meta.update(metadata or {})
    header = {
        "format_version": FORMAT_VERSION,
        "kind": nets[0].kind.value,
        "d_hidden": nets[0].d_hidden,
        "n_blocks": nets[0].n_blocks,
        "container": "meta" if isinstance(params, MetaParams) else "single",
        "networks": [{"phase": net.phase, "manifest": [[n, list(s)] for n, s in net.manifest]} for net in nets],
        "metadata": meta,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<I", len(head)))
    body.write(head)
    for net in nets:
        net.check()
        for name, shape in net.manifest:
            arr = np.ascontiguousarray(net.arrays[name], dtype="<f4")
            if arr.shape != tuple(shape):
                raise ContractViolation(f"cannot save lane-stacked array {name}")
            body.write(arr.tobytes())
    payload = body.getvalue()
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CorruptCheckpointError("not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        return json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable header: {exc}") from None


def load_params(path, like=None):
    """Read a checkpoint; ``like`` (params or MetaParams) enforces matching shapes."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CorruptCheckpointError("not a checkpoint (bad magic)")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptCheckpointError("checksum mismatch (truncated or corrupted file)")
    header = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported format version {header.get('format_version')}")
    kind = Kind(header["kind"])
    d, nb = header["d_hidden"], header["n_blocks"]
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    pos = len(MAGIC) + 4 + hlen
    nets = []
    for net in header["networks"]:
        expected = shape_manifest(kind, net["phase"], d, nb)
        listed = [(n, tuple(s)) for n, s in net["manifest"]]
        if listed != [(n, tuple(s)) for n, s in expected]:
            raise CorruptCheckpointError(f"shape manifest of {net['phase']} network does not match its kind")
        arrays = {}
        for name, shape in listed:
            count = int(np.prod(shape))
            nbytes = 4 * count
            if pos + nbytes > len(payload):
                raise CorruptCheckpointError("payload shorter than manifest")
            arrays[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += nbytes
        nets.append(GnnParams(kind, net["phase"], arrays, d, nb))
    if pos != len(payload):
        raise CorruptCheckpointError("trailing bytes after arrays")
    out = MetaParams(nets[0], nets[1], header.get("metadata", {})) if header["container"] == "meta" else nets[0]
    if like is not None:
        want, _ = _nets(like)
        got, _ = _nets(out)
        for w, g in zip(want, got):
            if w.manifest != g.manifest or w.kind is not g.kind:
                raise ShapeMismatchError(
                    f"checkpoint holds a {g.kind.value}/{g.phase} network, expected {w.kind.value}/{w.phase}")
        if len(want) != len(got):
            raise ShapeMismatchError("checkpoint container differs from the expected one")
    return out
