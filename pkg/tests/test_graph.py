import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moco.errors import InvalidInstanceError, InvalidParameterError, ParseError, WrongKindError
from moco.graph import (DIMACS, TSPLIB, Kind, ProblemInstance, generate_er_graph, generate_uniform_tsp,
                        load_dataset, load_instance, parse_dimacs, parse_tsplib, read_coordinate_lines,
                        save_instance, sparsify_knn, write_manifest)


def check_invariants(inst: ProblemInstance):
    if inst.kind is Kind.TSP:
        e = inst.edges
        assert (e[:, 0] != e[:, 1]).all()
        d = inst.dense_distances()
        assert (d >= 0).all()
        brute = np.sqrt(((inst.coords[:, None] - inst.coords[None]) ** 2).sum(-1))
        np.testing.assert_array_equal(d, brute)
        deg = np.bincount(e[:, 0], minlength=inst.n_nodes)
        assert (deg == inst.degree).all()
        assert inst.n_decisions == len(e)
        # decision index is a bijection onto edges
        ids = inst.edge_lookup[e[:, 0], e[:, 1]]
        np.testing.assert_array_equal(ids, np.arange(len(e)))
    else:
        e = inst.mis_edges
        assert (e[:, 0] != e[:, 1]).all()
        fwd = set(map(tuple, e.tolist()))
        assert fwd == {(v, u) for u, v in fwd}
        assert inst.n_decisions == inst.n_nodes


def test_uniform_tsp_small():
    inst = generate_uniform_tsp(4, 3)
    assert inst.coords.shape == (4, 2)
    assert ((inst.coords >= 0) & (inst.coords <= 1)).all()
    check_invariants(inst)


def test_uniform_tsp_deterministic():
    a, b = generate_uniform_tsp(100, 11), generate_uniform_tsp(100, 11)
    assert a == b
    assert a.coords.tobytes() == b.coords.tobytes()


def test_uniform_tsp_mean():
    for seed in range(3):
        m = generate_uniform_tsp(10000, seed).coords.mean(0)
        assert ((m > 0.49) & (m < 0.51)).all()


def test_uniform_tsp_too_small():
    with pytest.raises(InvalidInstanceError):
        generate_uniform_tsp(2, 0)


def test_er_extremes():
    assert generate_er_graph(50, 50, 0.0, 1).n_undirected_edges == 0
    full = generate_er_graph(10, 10, 1.0, 1)
    assert full.n_undirected_edges == 45
    check_invariants(full)


def test_er_bad_probability():
    with pytest.raises(InvalidParameterError):
        generate_er_graph(5, 5, 1.5, 0)


def test_er_edge_count_moments():
    # binomial moments conditional on the sampled n, summed over seeds
    p = 0.15
    total, mean, var = 0, 0.0, 0.0
    sizes = set()
    for seed in range(20):
        g = generate_er_graph(700, 800, p, seed)
        assert 700 <= g.n_nodes <= 800
        sizes.add(g.n_nodes)
        pairs = g.n_nodes * (g.n_nodes - 1) / 2
        total += g.n_undirected_edges
        mean += p * pairs
        var += p * (1 - p) * pairs
    assert abs(total - mean) < 3 * np.sqrt(var)
    assert len(sizes) > 1


def test_knn_degrees():
    inst = sparsify_knn(generate_uniform_tsp(100, 0), 20)
    assert inst.degree == 20 and inst.n_decisions == 2000
    check_invariants(inst)


def test_knn_clamps_to_complete():
    inst = sparsify_knn(generate_uniform_tsp(10, 0), 20)
    assert inst.degree == 9
    assert {tuple(r) for r in inst.edges.tolist()} == {(i, j) for i in range(10) for j in range(10) if i != j}


def test_knn_keeps_nearest():
    inst = sparsify_knn(generate_uniform_tsp(50, 5), 7)
    d = inst.dense_distances()
    for i in range(50):
        kept = set(inst.out_neighbors[i].tolist())
        dropped = set(range(50)) - kept - {i}
        assert max(d[i, j] for j in kept) <= min(d[i, j] for j in dropped)


def test_knn_tie_break_lower_index():
    # node 0 at the center, four nodes at equal distance
    coords = np.array([[0.5, 0.5], [0.6, 0.5], [0.4, 0.5], [0.5, 0.6], [0.5, 0.4], [0.9, 0.9]])
    inst = sparsify_knn(ProblemInstance(Kind.TSP, 6, coords=coords), 2)
    assert inst.out_neighbors[0].tolist() == [1, 2]


def test_knn_idempotent():
    inst = sparsify_knn(generate_uniform_tsp(30, 2), 5)
    again = sparsify_knn(inst, 5)
    assert again == inst
    np.testing.assert_array_equal(again.edges, inst.edges)


def test_knn_wrong_kind():
    with pytest.raises(WrongKindError):
        sparsify_knn(generate_er_graph(5, 5, 0.5, 0), 3)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 40), k=st.integers(1, 45), seed=st.integers(0, 2**31))
def test_tsp_invariants_property(n, k, seed):
    check_invariants(generate_uniform_tsp(n, seed))
    check_invariants(sparsify_knn(generate_uniform_tsp(n, seed), k))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), p=st.floats(0, 1), seed=st.integers(0, 2**31))
def test_mis_invariants_property(n, p, seed):
    g = generate_er_graph(n, n, p, seed)
    check_invariants(g)
    assert g == generate_er_graph(n, n, p, seed)


def test_tsplib_round_trip(tmp_path):
    inst = generate_uniform_tsp(100, 9)
    save_instance(inst, tmp_path / "a.tsp", TSPLIB)
    back = load_instance(tmp_path / "a.tsp", TSPLIB)
    assert back == inst
    assert back.coords.tobytes() == inst.coords.tobytes()
    assert back.seed == 9


def test_dimacs_grammar():
    g = parse_dimacs("p edge 3 2\ne 1 2\ne 2 3\n")
    assert g.kind is Kind.MIS and g.n_nodes == 3
    assert sorted(map(tuple, g.mis_edges.tolist())) == [(0, 1), (1, 0), (1, 2), (2, 1)]


def test_dimacs_round_trip(tmp_path):
    g = generate_er_graph(30, 30, 0.2, 4)
    save_instance(g, tmp_path / "g.dimacs", DIMACS)
    assert load_instance(tmp_path / "g.dimacs", DIMACS) == g


def test_tsplib_truncated_section():
    text = "NAME : x\nTYPE : TSP\nDIMENSION : 4\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 0\nEOF\n"
    with pytest.raises(ParseError) as err:
        parse_tsplib(text)
    assert err.value.line == 8


def test_tsplib_bad_header_names_line():
    with pytest.raises(ParseError, match="line 2"):
        parse_tsplib("NAME : x\nGARBAGE\n")


def test_tsplib_nonfinite_coordinate():
    text = "TYPE : TSP\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 inf 0\n3 1 1\nEOF\n"
    with pytest.raises(InvalidInstanceError):
        parse_tsplib(text)


def test_dimacs_edge_count_mismatch():
    with pytest.raises(ParseError):
        parse_dimacs("p edge 3 2\ne 1 2\n")


def test_manifest_round_trip(tmp_path):
    paths = []
    for i in range(3):
        p = tmp_path / f"i{i}.tsp"
        save_instance(generate_uniform_tsp(5, i), p)
        paths.append(p)
    write_manifest(tmp_path / "data.manifest", Kind.TSP, paths)
    kind, insts = load_dataset(tmp_path / "data.manifest")
    assert kind is Kind.TSP and [x.seed for x in insts] == [0, 1, 2]


def test_relabel_preserves_distances():
    inst = generate_uniform_tsp(8, 1)
    perm = np.random.default_rng(0).permutation(8)
    rel = inst.relabel(perm)
    d, dr = inst.dense_distances(), rel.dense_distances()
    np.testing.assert_array_equal(dr[np.ix_(perm, perm)], d)


def test_coordinate_lines(tmp_path):
    p = tmp_path / "tsp.txt"
    p.write_text("0 0 1 0 1 1 0 1 output 1 2 3 4 1\n\n0.5 0.5 0.1 0.2 0.3 0.9\n")
    insts = read_coordinate_lines(p)
    assert [i.n_nodes for i in insts] == [4, 3]
    np.testing.assert_array_equal(insts[0].coords[2], [1.0, 1.0])
    p.write_text("0 0 1 0 1\n")
    with pytest.raises(ParseError) as e:
        read_coordinate_lines(p)
    assert e.value.line == 1
