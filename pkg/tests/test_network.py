import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glove.network import (
    Fleet,
    build_adjacency,
    pairwise_distances,
    random_fleet,
    route,
    snapshot,
    step_mobility,
    topology_records,
)
from oracles import brute_force_routes


def fleet(positions, header=0, v=100.0):
    return Fleet(np.asarray(positions, float), header, (1000.0, 1000.0), v)


def test_mobility_zero_speed_or_time():
    f = fleet([[10, 20, 100], [500, 500, 100]])
    rng = np.random.default_rng(0)
    assert np.array_equal(step_mobility(fleet(f.positions, v=0.0), 0.1, rng).positions, f.positions)
    assert np.array_equal(step_mobility(f, 0.0, rng).positions, f.positions)


def test_mobility_speed_bound_and_region():
    rng = np.random.default_rng(1)
    f = random_fleet(rng, 25, (1000, 1000), 100, 100)
    for _ in range(200):
        g = step_mobility(f, 0.1, rng)
        assert np.all(np.linalg.norm(g.positions - f.positions, axis=1) <= 10 + 1e-9)
        assert g.positions[:, :2].min() >= 0 and g.positions[:, :2].max() <= 1000
        assert np.all(g.positions[:, 2] == 100) and g.header == f.header
        f = g


def test_mobility_reflects_at_border():
    f = fleet([[1.0, 500, 100]], v=100.0)
    rng = np.random.default_rng(3)
    for _ in range(100):
        f = step_mobility(f, 0.1, rng)
        assert 0 <= f.positions[0, 0] <= 1000


def test_mobility_deterministic():
    f = random_fleet(np.random.default_rng(0), 5, (1000, 1000), 100, 100)
    a = step_mobility(f, 0.1, np.random.default_rng(9))
    b = step_mobility(f, 0.1, np.random.default_rng(9))
    assert np.array_equal(build_adjacency(a, 500), build_adjacency(b, 500))


def test_adjacency_threshold():
    assert build_adjacency(np.array([[0, 0, 100], [499, 0, 100]]), 500)[0, 1] == 1
    assert build_adjacency(np.array([[0, 0, 100], [501, 0, 100]]), 500)[0, 1] == 0


def test_adjacency_matches_pairwise_check():
    pos = np.random.default_rng(4).uniform(0, 1000, size=(5, 3))
    adj = build_adjacency(pos, 500)
    for i, j in itertools.product(range(5), repeat=2):
        d = np.sqrt(sum((pos[i, k] - pos[j, k]) ** 2 for k in range(3)))
        assert adj[i, j] == (1 if i != j and d <= 500 else 0)
    assert np.array_equal(adj, adj.T)


def test_chain_routing():
    pos = [[0, 0, 100], [400, 0, 100], [800, 0, 100]]
    f = fleet(pos, header=2)
    assert snapshot(f, 0, 500).next_hop == (1, 2, None)


def test_complete_graph_hop_dominance():
    pos = np.random.default_rng(5).uniform(0, 300, size=(6, 3))
    adj = build_adjacency(pos, 1000)
    nh = route(adj, pairwise_distances(pos), 3, 1000, hop_weight=100.0, loss_weight=0.01)
    assert all(nh[i] == 3 for i in range(6) if i != 3) and nh[3] is None


def test_equal_cost_tie_takes_smallest_id():
    # 0 reaches header 3 via 1 or 2 with identical geometry
    pos = [[0, 0, 0], [300, 100, 0], [300, -100, 0], [600, 0, 0]]
    adj = build_adjacency(np.array(pos, float), 400)
    nh = route(adj, pairwise_distances(np.array(pos, float)), 3, 400)
    assert nh[0] == 1


@pytest.mark.parametrize("seed", range(30))
def test_route_costs_match_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    pos = np.column_stack([rng.uniform(0, 1000, (6, 2)), np.full(6, 100.0)])
    adj = build_adjacency(pos, 500)
    dist = pairwise_distances(pos)
    header = int(rng.integers(6))
    nh = route(adj, dist, header, 500, 1.0, 1.0)
    best = brute_force_routes(adj, dist, header, 500, 1.0, 1.0)
    for i in range(6):
        if i == header:
            continue
        if not np.isfinite(best[i]):
            assert nh[i] is None
            continue
        # walking next hops accumulates exactly the optimal cost
        cost, j, hops = 0.0, i, 0
        while j != header:
            k = nh[j]
            cost += 1.0 + (dist[j, k] / 500) ** 2
            j, hops = k, hops + 1
            assert hops <= 5
        assert cost == pytest.approx(best[i], rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_routing_forest_properties(seed, N):
    rng = np.random.default_rng(seed)
    f = fleet(np.column_stack([rng.uniform(0, 1000, (N, 2)), np.full(N, 100.0)]), header=int(rng.integers(N)))
    topo = snapshot(f, 0, 500)
    assert topo.next_hop[f.header] is None
    assert np.array_equal(topo.adjacency, topo.adjacency.T) and not topo.adjacency.diagonal().any()
    for i, j in topo.routed_links():
        assert topo.distances[i, j] <= 500 and topo.adjacency[i, j]
    for i in range(N):
        j, steps = i, 0
        while j is not None and j != f.header:
            j = topo.next_hop[j]
            steps += 1
            assert steps <= N - 1
    order = topo.postorder()
    pos = {v: k for k, v in enumerate(order)}
    assert sorted(order) == list(range(N))
    for i, j in topo.routed_links():
        assert pos[i] < pos[j]


def test_isolated_uav_unrouted():
    f = fleet([[0, 0, 100], [100, 0, 100], [900, 900, 100]], header=0)
    topo = snapshot(f, 0, 500)
    assert topo.next_hop[2] is None and topo.link_distance(2) == 0.0


def test_random_fleet_connected_and_header_flag():
    f = random_fleet(np.random.default_rng(2), 10, (1000, 1000), 100, 100, d_max=500)
    topo = snapshot(f, 0, 500)
    assert all(topo.next_hop[i] is not None for i in range(10) if i != f.header)
    assert f.is_header.sum() == 1


def test_topology_records():
    f = fleet([[0, 0, 100], [300, 0, 100]], header=1)
    assert topology_records(snapshot(f, 4, 500)) == [(4, 0, 1, 300.0)]
