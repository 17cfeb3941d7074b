import numpy as np
import pytest

from netdrift.errors import (
    DisconnectedGraph,
    StochasticityViolation,
)
from netdrift.topology import (
    build_network,
    check_doubly_stochastic,
    check_neighborhood_support,
    combination_set,
    complete_network,
    load_edge_list,
    metropolis_weights,
    network_from_spec,
    preset_matrices,
    random_geometric_network,
    ring_network,
)

from conftest import make_rng


def random_connected_network(n, rng, p=0.3):
    """Erdos-Renyi draws until connected (always terminates for test sizes)."""
    while True:
        adj = rng.random((n, n)) < p
        adj = adj | adj.T
        np.fill_diagonal(adj, True)
        try:
            return build_network(adj)
        except DisconnectedGraph:
            continue


def test_two_node_complete_is_valid():
    net = build_network(np.ones((2, 2), dtype=bool))
    assert net.n_nodes == 2
    assert net.degree(0) == 2


def test_isolated_node_rejected():
    adj = np.eye(3, dtype=bool)
    adj[0, 1] = adj[1, 0] = True
    with pytest.raises(DisconnectedGraph):
        build_network(adj)


def test_asymmetric_adjacency_rejected():
    adj = np.eye(3, dtype=bool)
    adj[0, 1] = True
    with pytest.raises(Exception):
        build_network(adj)


def test_ring_20_neighborhood_sizes():
    net = ring_network(20)
    assert all(net.degree(k) == 3 for k in range(20))


def test_metropolis_two_node_complete():
    a = metropolis_weights(complete_network(2))
    assert np.array_equal(a, np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_metropolis_single_node_identity():
    net = build_network(np.ones((1, 1), dtype=bool))
    assert np.array_equal(metropolis_weights(net), np.ones((1, 1)))


def test_metropolis_ring4_matches_direct_formula():
    net = ring_network(4)
    a = metropolis_weights(net)
    # independent evaluation of the degree-based rule
    deg = [net.degree(k) for k in range(4)]
    expected = np.zeros((4, 4))
    for l in range(4):
        for k in range(4):
            if l != k and net.adjacency[l, k]:
                expected[l, k] = min(1.0 / (deg[l] - 1), 1.0 / (deg[k] - 1))
    for k in range(4):
        expected[k, k] = 1.0 - expected[:, k].sum()
    assert np.allclose(a, expected, atol=0)
    assert np.all(np.abs(a.sum(axis=0) - 1) < 1e-12)
    assert np.all(np.abs(a.sum(axis=1) - 1) < 1e-12)


def test_metropolis_properties_on_random_graphs():
    rng = make_rng(7)
    for trial in range(20):
        net = random_connected_network(int(rng.integers(2, 15)), rng)
        a = metropolis_weights(net)
        assert np.array_equal(a, a.T)
        assert check_doubly_stochastic(a, tol=1e-10)
        assert np.all(a[~net.adjacency] == 0.0)


def test_powers_stay_doubly_stochastic():
    net = random_geometric_network(9, 0.5, seed=3)
    a = metropolis_weights(net)
    p = np.eye(9)
    for _ in range(10):
        p = p @ a
        assert check_doubly_stochastic(p, tol=1e-10)


def test_check_doubly_stochastic_cases():
    assert check_doubly_stochastic(np.eye(3))
    assert check_doubly_stochastic([[0.5, 0.5], [0.5, 0.5]])
    assert not check_doubly_stochastic([[1.0, 0.0], [0.5, 0.5]])
    assert not check_doubly_stochastic([[1.5, -0.5], [-0.5, 1.5]])


def test_preset_atc_mapping():
    a = metropolis_weights(ring_network(4))
    comb = preset_matrices("atc", a)
    assert np.array_equal(comb.a1, np.eye(4))
    assert np.array_equal(comb.a2, a)
    assert np.array_equal(comb.c, np.eye(4))


def test_preset_noncooperative_all_identity():
    comb = preset_matrices("non-cooperative", n_nodes=3)
    for m in (comb.a1, comb.a2, comb.c):
        assert np.array_equal(m, np.eye(3))


def test_preset_rejects_scaled_columns():
    a = 0.9 * metropolis_weights(ring_network(4))
    with pytest.raises(StochasticityViolation) as err:
        combination_set(a, np.eye(4), np.eye(4))
    assert err.value.matrix_name == "a1"
    assert err.value.axis == "columns"


def test_combination_set_stochasticity_tolerances():
    rng = make_rng(11)
    for _ in range(10):
        net = random_connected_network(6, rng)
        a = metropolis_weights(net)
        comb = preset_matrices("cta", a)
        assert np.all(np.abs(comb.a1.sum(axis=0) - 1) < 1e-12)
        assert np.all(np.abs(comb.a2.sum(axis=0) - 1) < 1e-12)
        assert np.all(np.abs(comb.c.sum(axis=1) - 1) < 1e-12)
        assert check_neighborhood_support(net, comb)


def test_right_stochastic_violation_names_rows():
    c = np.array([[0.5, 0.2], [0.0, 1.0]])
    with pytest.raises(StochasticityViolation) as err:
        combination_set(np.eye(2), np.eye(2), c)
    assert err.value.axis == "rows"


def test_edge_list_round_trip(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("0 1\n1 2\n2 3\n3 0\n")
    net = load_edge_list(path)
    ring = ring_network(4)
    assert np.array_equal(net.adjacency, ring.adjacency)


def test_network_from_spec_strings():
    assert network_from_spec("ring:5").n_nodes == 5
    assert network_from_spec("complete:3").degree(0) == 3
    geo = network_from_spec("random-geometric:12:0.5:9")
    assert geo.n_nodes == 12


def test_random_geometric_deterministic():
    a = random_geometric_network(15, 0.4, seed=5)
    b = random_geometric_network(15, 0.4, seed=5)
    assert np.array_equal(a.adjacency, b.adjacency)
