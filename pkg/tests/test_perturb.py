import numpy as np
import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from kgxk import DropSchedule
from kgxk.errors import BoundsError, ConfigError, ContractError
from kgxk.perturb import (
    drop_edges_distance,
    drop_edges_uniform,
    edge_distances,
    ego_network,
)

from conftest import chain_graph, random_graph


# -- schedules ----------------------------------------------------------------


def test_schedule_validation():
    with pytest.raises(ConfigError):
        DropSchedule(kind="nope")
    with pytest.raises(ConfigError):
        DropSchedule.uniform(1.5)
    with pytest.raises(ConfigError):
        DropSchedule(kind="distance", p_max=-0.1)
    with pytest.raises(ConfigError):
        DropSchedule(kind="distance", gamma=1.0)


def test_p_drop_uniform_is_constant():
    s = DropSchedule.uniform(0.3)
    assert s.p_drop(0) == s.p_drop(7) == 0.3


def test_p_drop_distance_curve():
    s = DropSchedule.distance(p_max=0.8, gamma=0.5)
    assert s.p_drop(0) == 0.0
    assert s.p_drop(1) == pytest.approx(0.4)
    assert s.p_drop(2) == pytest.approx(0.6)
    assert s.p_drop(np.inf) == 0.8
    # monotone nondecreasing in d
    ds = [0, 1, 2, 3, 5, 10, np.inf]
    ps = [s.p_drop(d) for d in ds]
    assert all(a <= b for a, b in zip(ps, ps[1:]))


# -- ego networks -------------------------------------------------------------


@pytest.mark.parametrize("seed,radius", [(0, 1), (1, 2), (2, 3)])
def test_ego_network_matches_networkx(seed, radius):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n_nodes=15, n_edges=25)
    center = int(rng.integers(g.num_entities))
    G = nx.Graph()
    G.add_nodes_from(range(g.num_entities))
    for e in range(g.num_edges):
        G.add_edge(int(g.heads[e]), int(g.tails[e]))
    inside = set(nx.ego_graph(G, center, radius=radius).nodes)
    view = ego_network(g, [center], radius)
    for e in range(g.num_edges):
        expect = int(g.heads[e]) in inside and int(g.tails[e]) in inside
        assert view.kept[e] == expect


def test_ego_radius_zero_keeps_self_loops_only():
    g = chain_graph(3)
    view = ego_network(g, [1], 0)
    assert view.num_kept == 0


def test_ego_validation():
    g = chain_graph(2)
    with pytest.raises(ContractError):
        ego_network(g, [], 1)
    with pytest.raises(ContractError):
        ego_network(g, [0], -1)


# -- uniform dropping ---------------------------------------------------------


def test_uniform_drop_pairs_inverse_edges():
    rng = np.random.default_rng(0)
    g = random_graph(rng, n_nodes=20, n_edges=40)
    view = drop_edges_uniform(g, 0.5, rng)
    for e in range(g.num_base_edges):
        assert view.kept[e] == view.kept[g.pair_id(e)]


def test_uniform_drop_keep_rate_concentrates():
    # keep-rate over many paired draws concentrates near 1 - p
    rng = np.random.default_rng(7)
    g = random_graph(rng, n_nodes=60, n_edges=500)
    kept = [drop_edges_uniform(g, 0.3, rng).num_kept / g.num_edges
            for _ in range(40)]
    assert abs(np.mean(kept) - 0.70) < 0.02


def test_uniform_drop_edges_p0_p1():
    rng = np.random.default_rng(1)
    g = chain_graph(4)
    assert drop_edges_uniform(g, 0.0, rng).num_kept == g.num_edges
    assert drop_edges_uniform(g, 1.0, rng).num_kept == 0
    with pytest.raises(BoundsError):
        drop_edges_uniform(g, -0.1, rng)


def test_uniform_drop_deterministic_per_seed():
    g = random_graph(np.random.default_rng(3), n_edges=50)
    a = drop_edges_uniform(g, 0.4, np.random.default_rng(42)).kept
    b = drop_edges_uniform(g, 0.4, np.random.default_rng(42)).kept
    assert np.array_equal(a, b)


# -- distance-biased dropping -------------------------------------------------


def test_edge_distances_oracle():
    g = chain_graph(4)  # path 0-1-2-3-4
    d = edge_distances(g, 0)
    # base edge i connects i and i+1, min endpoint distance = i
    assert list(d) == [0, 1, 2, 3]
    with pytest.raises(BoundsError):
        edge_distances(g, 99)


def test_edge_distances_unreachable_is_inf():
    from kgxk.graph import Triple, Vocab, build_graph

    v = Vocab(["a", "b", "c", "d"], ["r"])
    g = build_graph([Triple(0, 0, 1), Triple(2, 0, 3)], v)
    d = edge_distances(g, 0)
    assert d[0] == 0 and np.isinf(d[1])


def test_distance_drop_respects_schedule():
    # gamma^d factors: edges at distance 0 never drop, far edges drop often
    rng = np.random.default_rng(5)
    g = chain_graph(30)
    sched = DropSchedule.distance(p_max=0.95, gamma=0.5)
    keeps = np.zeros(g.num_base_edges)
    n = 300
    for _ in range(n):
        keeps += drop_edges_distance(g, 0, sched, rng).kept[: g.num_base_edges]
    rate = keeps / n
    assert rate[0] == 1.0  # p_drop(0) = 0
    d = edge_distances(g, 0)
    for e in range(g.num_base_edges):
        assert abs((1.0 - rate[e]) - sched.p_drop(d[e])) < 0.1


def test_distance_drop_pairs_inverses():
    rng = np.random.default_rng(9)
    g = random_graph(rng, n_nodes=25, n_edges=60)
    view = drop_edges_distance(g, 0, DropSchedule.distance(), rng)
    base = view.kept[: g.num_base_edges]
    assert np.array_equal(base, view.kept[g.num_base_edges:])


def test_distance_drop_rejects_bad_schedule():
    class Bad:
        def p_drop(self, d):
            return 1.5

    g = chain_graph(3)
    with pytest.raises(ConfigError):
        drop_edges_distance(g, 0, Bad(), np.random.default_rng(0))


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_uniform_drop_view_is_subset_property(seed, p):
    rng = np.random.default_rng(seed)
    g = chain_graph(5)
    view = drop_edges_uniform(g, p, rng)
    assert view.kept.shape == (g.num_edges,)
    ids = view.kept_edge_ids()
    assert all(0 <= e < g.num_edges for e in ids)
    # paired invariant holds for every draw
    for e in range(g.num_base_edges):
        assert view.kept[e] == view.kept[g.pair_id(e)]
