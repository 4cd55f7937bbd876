import networkx as nx
import numpy as np
import pytest

from blanket_lab.errors import Disconnected, InvalidGraph, ParseError, SizeLimitExceeded, InvalidParameter
from blanket_lab.graph_core import (build_graph, diameter, dirichlet_energy, effective_resistance,
                                    graph_metric, induced_subgraph, potential, read_graph,
                                    stationary_measure, write_graph)
from blanket_lab.rng import generator


def random_connected(n, extra, seed, weighted=True):
    rng = generator(seed)
    edges = [(int(rng.integers(0, v)), v) for v in range(1, n)]
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        edges.append((int(a), int(b)))
    w = rng.uniform(0.5, 2.0, len(edges)) if weighted else np.ones(len(edges))
    return build_graph([(a, b, float(c)) for (a, b), c in zip(edges, w)], n)


def test_k2_mass_and_degree():
    g = build_graph([(0, 1)])
    assert g.n_vertices == 2 and g.n_edges == 1
    assert g.total_mass == 2.0
    assert g.is_tree()


def test_self_loop_counts_twice():
    g = build_graph([(0, 1), (1, 1, 2.0)], multigraph=True)
    assert g.mu.tolist() == [1.0, 5.0]
    with pytest.raises(InvalidGraph):
        build_graph([(0, 1), (1, 1)])


def test_rejects_bad_input():
    with pytest.raises(InvalidGraph):
        build_graph([])
    with pytest.raises(InvalidGraph):
        build_graph([(0, 1, 0.0)])
    with pytest.raises(InvalidGraph):
        build_graph([(0, 5)], n_vertices=3)
    with pytest.raises(Disconnected):
        build_graph([(0, 1), (2, 3)])
    g = build_graph([(0, 1), (2, 3)], require_connected=False)
    assert g.n_vertices == 4


def test_stationary_measure_normalized():
    g = random_connected(12, 5, 1)
    pi = stationary_measure(g)
    assert np.isclose(pi.pi.sum(), 1.0)
    assert np.allclose(pi.mu_x, g.mu) and pi.total_mass == g.total_mass


@pytest.mark.parametrize("seed", range(5))
def test_resistance_matches_networkx(seed):
    g = random_connected(15, 10, seed)
    h = nx.Graph()
    for a, b, w in g.edge_list():
        # conductances of parallel edges add
        prev = h.get_edge_data(a, b, {"weight": 0.0})["weight"]
        h.add_edge(a, b, weight=prev + w)
    r = graph_metric(g, "resistance").values
    for a, b in [(0, 14), (3, 7), (1, 2)]:
        ref = nx.resistance_distance(h, a, b, weight="weight", invert_weight=False)
        assert abs(r[a, b] - ref) < 1e-9
        assert abs(effective_resistance(g, a, b) - ref) < 1e-8


def test_tree_resistance_equals_path_length():
    g = random_connected(40, 0, 3)
    lengths = {(min(a, b), max(a, b)): 1.0 / w for a, b, w in g.edge_list()}
    h = nx.Graph()
    for (a, b), ln in lengths.items():
        h.add_edge(a, b, length=ln)
    d = dict(nx.shortest_path_length(h, source=0, weight="length"))
    for x in range(1, 40):
        assert abs(effective_resistance(g, 0, x) - d[x]) < 1e-9


def test_thomson_energy_equals_resistance():
    g = random_connected(20, 15, 7)
    phi = potential(g, 2, 9)
    r = phi[2] - phi[9]
    assert abs(dirichlet_energy(g, phi) - r) < 1e-8
    assert abs(r - graph_metric(g).values[2, 9]) < 1e-8


def test_parallel_edges_add_conductance():
    g = build_graph([(0, 1, 1.0), (0, 1, 1.0)])
    assert abs(effective_resistance(g, 0, 1) - 0.5) < 1e-9


def test_resistance_same_vertex_rejected():
    with pytest.raises(InvalidParameter):
        effective_resistance(build_graph([(0, 1)]), 1, 1)


def test_shortest_path_metric_and_diameter():
    g = build_graph([(i, i + 1) for i in range(9)])
    d = graph_metric(g, "shortest-path").values
    assert d[0, 9] == 9
    assert diameter(g) == 9
    assert abs(diameter(g, "resistance") - 9) < 1e-12
    cyc = build_graph([(i, (i + 1) % 6) for i in range(6)])
    assert diameter(cyc) == 3


def test_large_resistance_needs_lazy():
    g = build_graph([(i, i + 1) for i in range(5100)] + [(0, 5100)])
    with pytest.raises(SizeLimitExceeded):
        graph_metric(g)
    lazy = graph_metric(g, lazy=True)
    assert abs(lazy(0, 1) - 5100 / 5101) < 1e-6


def test_graph_roundtrip(tmp_path):
    g = random_connected(10, 4, 2)
    p = tmp_path / "g.txt"
    write_graph(g, p)
    h = read_graph(p)
    assert h.edge_list() == g.edge_list()


def test_read_graph_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("3 2\n0 1 1.0\n")
    with pytest.raises(ParseError):
        read_graph(p)


def test_induced_subgraph_relabels():
    g = build_graph([(0, 1), (1, 2), (2, 3), (3, 0)])
    sub, ids = induced_subgraph(g, [1, 2, 3])
    assert sub.n_vertices == 3 and sub.n_edges == 2
    assert ids.tolist() == [1, 2, 3]
