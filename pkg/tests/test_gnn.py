import numpy as np
import pytest

from moco.errors import ContractViolation, CorruptCheckpointError
from moco.gnn import (ALPHA_EPS, GnnParams, MetaParams, ShapeMismatchError, Topology, decode_theta, gcn_forward,
                      graphnet_forward, init_params, layer_norm, load_params, read_header, save_params,
                      shape_manifest)
from moco.graph import Kind

from gnn_oracles import D, embed, gcn_ref, graphnet_ref, randomize_biases, rel_err


def small(kind, phase, seed=0, d=D, n_blocks=1):
    return init_params(seed, kind, phase, d_hidden=d, n_blocks=n_blocks)


def zero_blocks(params):
    for name, a in params.arrays.items():
        if name.startswith("block"):
            params.arrays[name] = np.zeros_like(a)
    return params


@pytest.mark.parametrize("edges", [[(0, 1)], [(0, 1), (1, 2), (2, 0), (1, 0), (0, 2)]])
@pytest.mark.parametrize("phase", ["init", "update"])
def test_graphnet_one_block_matches_hand(edges, phase):
    rng = np.random.default_rng(len(edges))
    p = randomize_biases(small(Kind.TSP, phase, seed=3), rng)
    s, r = np.array(edges).T
    n = 3
    topo = Topology(n, s, r)
    fe = p.arrays["embed_edge.W"].shape[1]
    edge_in = rng.normal(size=(len(edges), fe))
    node_in = rng.normal(size=(n, 1))
    glob = rng.normal(size=45) if phase == "update" else None
    he, hg = graphnet_forward(p, topo, edge_in[None], node_in[None], None if glob is None else glob[None])
    he_ref, hg_ref = graphnet_ref(p.arrays, s, r, n, edge_in, node_in, glob)
    np.testing.assert_allclose(he[0], he_ref, atol=1e-6, rtol=1e-6)
    if glob is not None:
        np.testing.assert_allclose(hg[0], hg_ref, atol=1e-6, rtol=1e-6)


@pytest.mark.parametrize("phase", ["init", "update"])
def test_gcn_one_block_matches_hand(phase):
    rng = np.random.default_rng(1)
    p = randomize_biases(small(Kind.MIS, phase, seed=4), rng)
    # two-node path plus an isolated node
    topo = Topology(3, np.array([0, 1]), np.array([1, 0]))
    adj = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    fv = p.arrays["embed_node.W"].shape[1]
    node_in = rng.normal(size=(3, fv))
    glob = rng.normal(size=45) if phase == "update" else None
    hv, hg = gcn_forward(p, topo, node_in[None], None if glob is None else glob[None])
    hv_ref, hg_ref = gcn_ref(p.arrays, adj, node_in, glob)
    np.testing.assert_allclose(hv[0], hv_ref, atol=1e-6, rtol=1e-6)
    if glob is not None:
        np.testing.assert_allclose(hg[0], hg_ref, atol=1e-6, rtol=1e-6)


def test_zero_weight_identity_graphnet():
    rng = np.random.default_rng(0)
    p = zero_blocks(randomize_biases(init_params(0, Kind.TSP, "update", n_blocks=3), rng))
    for name in list(p.arrays):
        if name.startswith("block"):
            assert not p.arrays[name].any()
    topo = Topology(4, np.array([0, 1, 2, 3, 0]), np.array([1, 2, 3, 0, 2]))
    edge_in, node_in, glob = rng.normal(size=(1, 5, 41)), rng.normal(size=(1, 4, 1)), rng.normal(size=(1, 45))
    he, hg = graphnet_forward(p, topo, edge_in, node_in, glob)
    A = p.arrays
    np.testing.assert_allclose(he[0], embed(edge_in[0], A["embed_edge.W"], A["embed_edge.b"]), atol=1e-6)
    np.testing.assert_allclose(hg[0], embed(glob[0], A["embed_global.W"], A["embed_global.b"]), atol=1e-6)


def test_zero_weight_identity_gcn():
    rng = np.random.default_rng(0)
    p = zero_blocks(randomize_biases(init_params(0, Kind.MIS, "update", n_blocks=3), rng))
    topo = Topology(3, np.array([0, 1]), np.array([1, 0]))
    node_in, glob = rng.normal(size=(1, 3, 41)), rng.normal(size=(1, 45))
    hv, hg = gcn_forward(p, topo, node_in, glob)
    A = p.arrays
    np.testing.assert_allclose(hv[0], embed(node_in[0], A["embed_node.W"], A["embed_node.b"]), atol=1e-6)
    np.testing.assert_allclose(hg[0], embed(glob[0], A["embed_global.W"], A["embed_global.b"]), atol=1e-6)


def test_zero_decoder():
    p = init_params(0, Kind.TSP, "update", zero=True)
    theta, alpha = decode_theta(p, np.ones((1, 7, 128), np.float32), np.ones((1, 128), np.float32))
    assert (theta == 0).all()
    assert alpha[0] == pytest.approx(np.log(2.0) + ALPHA_EPS, abs=1e-6)


def test_alpha_monotone_and_theta_independent():
    rng = np.random.default_rng(0)
    p = init_params(1, Kind.TSP, "update")
    dec, g = rng.normal(size=(1, 5, 128)).astype(np.float32), np.abs(rng.normal(size=(1, 128))).astype(np.float32)
    p.arrays["decode_alpha.W"] = np.abs(p.arrays["decode_alpha.W"])
    theta0, a0 = decode_theta(p, dec, g)
    alphas = []
    for scale in [0.5, 1, 2, 4]:
        q = GnnParams(p.kind, p.phase, dict(p.arrays))
        q.arrays["decode_alpha.W"] = p.arrays["decode_alpha.W"] * scale
        theta, a = decode_theta(q, dec, g)
        np.testing.assert_array_equal(theta, theta0)
        alphas.append(a[0])
    assert all(x < y for x, y in zip(alphas, alphas[1:]))


def _permuted_topology(n, s, r, perm, q):
    return Topology(n, perm[s][q], perm[r][q])


@pytest.mark.parametrize("phase", ["init", "update"])
def test_graphnet_equivariance(phase):
    rng = np.random.default_rng(5)
    n = 7
    s, r = np.nonzero(~np.eye(n, dtype=bool))
    p = init_params(2, Kind.TSP, phase)
    fe = p.arrays["embed_edge.W"].shape[1]
    edge_in, node_in = rng.normal(size=(1, len(s), fe)), rng.normal(size=(1, n, 1))
    glob = rng.normal(size=(1, 45)) if phase == "update" else None
    perm, q = rng.permutation(n), rng.permutation(len(s))
    node_p = np.empty_like(node_in)
    node_p[:, perm] = node_in
    he, hg = graphnet_forward(p, Topology(n, s, r), edge_in, node_in, glob)
    he2, hg2 = graphnet_forward(p, _permuted_topology(n, s, r, perm, q), edge_in[:, q], node_p, glob)
    assert rel_err(he2, he[:, q]) <= 1e-6
    if glob is not None:
        assert rel_err(hg2, hg) <= 1e-6
        th, _ = decode_theta(p, he, hg)
        th2, _ = decode_theta(p, he2, hg2)
        assert rel_err(th2, th[:, q]) <= 1e-6


def test_gcn_equivariance_and_automorphism():
    rng = np.random.default_rng(6)
    n = 8
    adj = np.triu(rng.random((n, n)) < 0.4, 1)
    adj = adj | adj.T
    s, r = np.nonzero(adj)
    p = init_params(3, Kind.MIS, "update")
    node_in, glob = rng.normal(size=(1, n, 41)), rng.normal(size=(1, 45))
    perm = rng.permutation(n)
    node_p = np.empty_like(node_in)
    node_p[:, perm] = node_in
    hv, hg = gcn_forward(p, Topology(n, s, r), node_in, glob)
    hv2, hg2 = gcn_forward(p, Topology(n, perm[s], perm[r]), node_p, glob)
    assert rel_err(hv2[:, perm], hv) <= 1e-6 and rel_err(hg2, hg) <= 1e-6
    # star: swapping two leaves with identical features changes nothing
    star = Topology(4, np.array([0, 0, 0, 1, 2, 3]), np.array([1, 2, 3, 0, 0, 0]))
    x = np.ones((1, 4, 1))
    out, _ = gcn_forward(init_params(0, Kind.MIS, "init"), star, x)
    np.testing.assert_array_equal(out[0, 1], out[0, 2])
    np.testing.assert_array_equal(out[0, 2], out[0, 3])


def test_layer_norm_stats():
    x = np.random.default_rng(0).normal(3.0, 5.0, size=(2, 50, 6))
    y = layer_norm(x)
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    var = x.var(axis=1)
    np.testing.assert_allclose(y.var(axis=1), var / (var + 1e-5), atol=1e-12)
    assert (layer_norm(np.full((1, 4, 2), 7.0)) == 0).all()


def closed_form_count(kind, phase, d=128, nb=3):
    if kind is Kind.TSP:
        widths = {"init": [1, 1], "update": [41, 1, 45]}[phase]
        cat = 3 if phase == "init" else 4
        block = 2 * (d * cat * d + d) + ((d * 3 * d + d) if phase == "update" else 0)
    else:
        widths = {"init": [1], "update": [41, 45]}[phase]
        block = 2 * (d * d + d) + ((d * 2 * d + d + d * d + d) if phase == "update" else 0)
    heads = (d + 1) * (2 if phase == "update" else 1)
    return sum(d * w + d for w in widths) + nb * block + heads


@pytest.mark.parametrize("kind", [Kind.TSP, Kind.MIS])
@pytest.mark.parametrize("phase", ["init", "update"])
def test_param_count(kind, phase):
    p = init_params(0, kind, phase)
    assert p.size == closed_form_count(kind, phase) == p.flatten().size
    if kind is Kind.TSP:
        assert p.size == {"init": 296321, "update": 553602}[phase]


def test_block_shapes_match_design():
    man = dict(shape_manifest(Kind.TSP, "update"))
    assert man["block0.W_e"] == (128, 512) and man["block0.W_v"] == (128, 512) and man["block0.W_g"] == (128, 384)
    man = dict(shape_manifest(Kind.MIS, "update"))
    assert man["block2.W_3"] == (128, 256) and man["block2.W_4"] == (128, 128)


def test_init_deterministic_and_zero():
    a, b = init_params(7, Kind.MIS, "update"), init_params(7, Kind.MIS, "update")
    assert a.flatten().tobytes() == b.flatten().tobytes()
    assert not init_params(7, Kind.MIS, "update", zero=True).flatten().any()
    assert init_params(8, Kind.MIS, "update").flatten().tobytes() != a.flatten().tobytes()


def test_flatten_round_trip_and_stacking():
    meta = MetaParams.initialize(0, Kind.TSP, d_hidden=8)
    vec = meta.flatten()
    back = MetaParams.unflatten(Kind.TSP, vec, d_hidden=8)
    assert back.flatten().tobytes() == vec.tobytes()
    stacked = MetaParams.unflatten(Kind.TSP, np.stack([vec, 2 * vec]), d_hidden=8)
    assert stacked.init.n_lanes == 2
    with pytest.raises(ContractViolation):
        GnnParams.unflatten(Kind.TSP, "init", vec[:-1], d_hidden=8)


def test_checkpoint_round_trip(tmp_path):
    meta = MetaParams.initialize(3, Kind.MIS)
    save_params(meta, tmp_path / "m.ckpt", {"stage": 1})
    back = load_params(tmp_path / "m.ckpt", like=meta)
    assert back.flatten().tobytes() == meta.flatten().tobytes()
    assert back.metadata["stage"] == 1 and read_header(tmp_path / "m.ckpt")["kind"] == "mis"
    single = init_params(1, Kind.TSP, "init")
    save_params(single, tmp_path / "s.ckpt")
    assert load_params(tmp_path / "s.ckpt").flatten().tobytes() == single.flatten().tobytes()


def test_checkpoint_corruption(tmp_path):
    meta = MetaParams.initialize(3, Kind.MIS, d_hidden=8)
    path = tmp_path / "m.ckpt"
    save_params(meta, path)
    data = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptCheckpointError):
        load_params(tmp_path / "t.ckpt")
    flipped = bytearray(data)
    flipped[-20] ^= 0xFF
    (tmp_path / "f.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(CorruptCheckpointError, match="checksum"):
        load_params(tmp_path / "f.ckpt")
    (tmp_path / "x.ckpt").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CorruptCheckpointError, match="magic"):
        load_params(tmp_path / "x.ckpt")


def test_checkpoint_cross_kind(tmp_path):
    save_params(MetaParams.initialize(0, Kind.MIS, d_hidden=8), tmp_path / "m.ckpt")
    with pytest.raises(ShapeMismatchError):
        load_params(tmp_path / "m.ckpt", like=MetaParams.initialize(0, Kind.TSP, d_hidden=8))


def test_forward_pure():
    p = init_params(0, Kind.TSP, "init")
    topo = Topology(3, np.array([0, 1, 2]), np.array([1, 2, 0]))
    x = np.random.default_rng(0).normal(size=(1, 3, 1))
    a = graphnet_forward(p, topo, x, x)[0]
    b = graphnet_forward(p, topo, x, x)[0]
    assert a.tobytes() == b.tobytes()
