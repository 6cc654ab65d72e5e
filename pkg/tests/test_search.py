import numpy as np
import pytest

import moco.search as search_mod
from moco.errors import ConfigError, ContractViolation, WrongKindError
from moco.features import build_update_graph
from moco.gnn import MetaParams, forward
from moco.graph import Kind, ProblemInstance, generate_er_graph, generate_uniform_tsp
from moco.kernel import action_probabilities, initial_state, is_feasible
from moco.rollout import sample_batch
from moco.search import (SearchConfig, apply_update, initialize_theta, lane_rng, parallel_restarts, restart_plan,
                         run_lanes, sample_and_record, search, start_state)

TINY = dict(d_hidden=16)


def meta(kind=Kind.TSP, seed=0, zero=False):
    return MetaParams.initialize(seed, kind, zero=zero, **TINY)


def test_config_validation():
    for bad in [dict(K=0), dict(b=1), dict(M=0), dict(L=16), dict(conditioning_mode="x"),
                dict(conditioning_mode="naive_continuation")]:
        with pytest.raises(ConfigError):
            SearchConfig(**bad).validate()
    assert SearchConfig(K=30, conditioning_mode="naive_continuation", train_K=10).K_feature == 10
    assert SearchConfig(K=30).K_feature == 30


def test_zero_init_net_constant_theta():
    inst = generate_uniform_tsp(7, 0)
    th = initialize_theta(inst, meta(zero=True).init, 3)
    assert (th == th.flat[0]).all()
    p = action_probabilities(th[0], initial_state(inst, 3))
    np.testing.assert_allclose(p[p > 0], 1 / 6)


def test_initialize_theta_deterministic_and_equivariant():
    inst = generate_uniform_tsp(8, 2)
    m = meta(seed=5)
    a = initialize_theta(inst, m.init, 1)
    assert a.tobytes() == initialize_theta(inst, m.init, 1).tobytes()
    perm = np.random.default_rng(0).permutation(8)
    rel = inst.relabel(perm)
    b = initialize_theta(rel, m.init, perm[1])
    where = rel.edge_lookup[perm[inst.edges[:, 0]], perm[inst.edges[:, 1]]]
    np.testing.assert_allclose(b[0, where], a[0], rtol=1e-5, atol=1e-6)


def test_kind_mismatch():
    with pytest.raises(WrongKindError):
        initialize_theta(generate_er_graph(5, 5, 0.5, 0), meta(Kind.TSP).init)


def _sampled_state(inst, m, K=5):
    st = start_state(inst, m, K, K, [(0, 0)], [0])
    sample_and_record(st, 8)
    return st


def test_alpha_one_gives_theta_tilde():
    inst = generate_uniform_tsp(8, 0)
    m = meta(seed=1)
    st = _sampled_state(inst, m)
    theta_tilde, _ = forward(m.update, build_update_graph(st))
    apply_update(st, m.update, alpha_override=1.0)
    np.testing.assert_array_equal(st.theta, np.asarray(theta_tilde, dtype=np.float64))


def test_alpha_two_halves(monkeypatch):
    g = ProblemInstance(Kind.MIS, 2, mis_edges=np.zeros((0, 2), dtype=np.int64))
    st = _sampled_state(g, meta(Kind.MIS))
    monkeypatch.setattr(search_mod, "forward", lambda p, fg: (np.array([[2.0, 4.0]]), np.array([2.0])))
    apply_update(st, None)
    np.testing.assert_array_equal(st.theta, [[1.0, 2.0]])


def test_smaller_alpha_sharpens_policy():
    inst = generate_uniform_tsp(9, 0)
    theta_tilde = np.random.default_rng(0).normal(size=inst.n_decisions)
    state = initial_state(inst, 0)
    peaks = [action_probabilities(theta_tilde / a, state).max() for a in [4.0, 2.0, 1.0, 0.5, 0.25]]
    assert all(x < y for x, y in zip(peaks, peaks[1:]))


def test_k1_is_one_batch():
    inst = generate_uniform_tsp(9, 3)
    m = meta(seed=2)
    cfg = SearchConfig(K=1, b=16, seed=4)
    res = search(inst, m, cfg)
    seeds, starts = restart_plan(inst, cfg)
    theta0 = initialize_theta(inst, m.init, starts[0])[0]
    batch = sample_batch(theta0, inst, 16, lane_rng(seeds[0], 0), starts[0])
    assert res.best_objective == batch.objectives.min()
    assert np.isnan(res.trajectory.rows[0][4])  # no update after the final batch


def test_best_so_far_monotone_and_budget():
    inst = generate_uniform_tsp(10, 1)
    cfg = SearchConfig(K=12, b=8, M=3, seed=1)
    res = parallel_restarts(inst, meta(seed=3), cfg)
    assert res.n_constructions == 12 * 8 * 3
    assert len(res.trajectory.rows) == 12 * 3
    for r in range(3):
        curve = res.trajectory.best_curve(r)
        assert len(curve) == 12 and (np.diff(curve) <= 0).all()
        assert curve[-1] == res.restart_objectives[r]
    assert res.best_objective == res.restart_objectives.min()
    assert is_feasible(inst, res.best_solution)


def test_zero_nets_improve_over_first_batch():
    inst = generate_uniform_tsp(8, 0)
    res = parallel_restarts(inst, meta(zero=True), SearchConfig(K=50, b=64, M=100, seed=0))
    first = np.array([res.trajectory.best_curve(r)[0] for r in range(100)])
    assert (res.restart_objectives <= first).all()
    assert (res.restart_objectives < first).sum() >= 95


def test_m1_equals_search_and_restarts_independent():
    inst = generate_er_graph(20, 20, 0.2, 5)
    m = meta(Kind.MIS, seed=4)
    cfg = SearchConfig(K=4, b=4, M=3, seed=9)
    many = parallel_restarts(inst, m, cfg)
    one = search(inst, m, cfg)
    assert one.best_objective == many.restart_objectives[0]
    seeds, starts = restart_plan(inst, cfg)
    # running the restarts in reverse order, one lane at a time, gives the same results
    for r in reversed(range(3)):
        st = run_lanes(inst, m, 4, 4, [seeds[r]], [starts[r]])
        assert st.best_objectives()[0] == many.restart_objectives[r]


def test_restart_plan_prefix_stable():
    inst = generate_uniform_tsp(20, 0)
    a = restart_plan(inst, SearchConfig(M=2, seed=3))
    b = restart_plan(inst, SearchConfig(M=5, seed=3))
    assert a[0] == b[0][:2] and a[1] == b[1][:2]
    assert len(set(b[1])) > 1


@pytest.mark.parametrize("mode", ["full", "naive_continuation"])
def test_conditioning_feature(mode, monkeypatch):
    inst = generate_uniform_tsp(7, 0)
    cfg = SearchConfig(K=6, b=4, conditioning_mode=mode, train_K=3)
    seen = []
    real = search_mod.build_update_graph

    def spy(state):
        fg = real(state)
        seen.append((state.k, float(fg.global_features[0, -1])))
        return fg

    monkeypatch.setattr(search_mod, "build_update_graph", spy)
    search(inst, meta(), cfg)
    denom = 6 if mode == "full" else 3
    assert [k for k, _ in seen] == list(range(5))
    for k, v in seen:
        assert v == pytest.approx(k / denom, rel=1e-6)


def test_step_past_budget():
    inst = generate_uniform_tsp(5, 0)
    m = meta()
    st = run_lanes(inst, m, 2, 4, [(0, 0)], [0])
    with pytest.raises(ContractViolation):
        search_mod.step(st, m.update, 4)


def test_trajectory_csv():
    g = generate_er_graph(15, 15, 0.3, 0)
    res = search(g, meta(Kind.MIS), SearchConfig(K=3, b=4))
    text = res.trajectory.to_csv(Kind.MIS, include_time=False)
    lines = text.splitlines()
    assert lines[0] == "restart,k,best_objective,batch_best,alpha"
    assert float(lines[-1].split(",")[2]) == -res.best_objective
    assert "wall_ms" in res.trajectory.to_csv(Kind.MIS)


def test_anytime_read_out():
    inst = generate_uniform_tsp(9, 0)
    res = parallel_restarts(inst, meta(), SearchConfig(K=5, b=4, M=2))
    assert res.trajectory.best_at(4) == res.best_objective
    assert res.trajectory.best_at(0) >= res.trajectory.best_at(4)
    with pytest.raises(ContractViolation):
        res.trajectory.best_at(5)


def test_collapsing_alpha_is_clipped():
    inst = generate_uniform_tsp(8, 0)
    st = _sampled_state(inst, meta(seed=1))
    apply_update(st, meta(seed=1).update, alpha_override=1e-300)
    assert np.isfinite(st.theta).all() and np.abs(st.theta).max() == search_mod.THETA_LIMIT
    assert not st.diverged.any()


def test_nonfinite_update_keeps_theta_and_flags_lane(monkeypatch):
    g = ProblemInstance(Kind.MIS, 2, mis_edges=np.zeros((0, 2), dtype=np.int64))
    st = start_state(g, meta(Kind.MIS), 3, 3, [(0, 0), (0, 1)], [0, 0])
    sample_and_record(st, 4)
    before = st.theta.copy()
    monkeypatch.setattr(search_mod, "forward",
                        lambda p, fg: (np.array([[np.nan, 1.0], [3.0, 4.0]]), np.array([1.0, 2.0])))
    apply_update(st, None)
    np.testing.assert_array_equal(st.theta[0], before[0])
    np.testing.assert_array_equal(st.theta[1], [1.5, 2.0])
    assert st.diverged.tolist() == [True, False]
