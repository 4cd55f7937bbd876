import math

import networkx as nx
import numpy as np
import pytest

from blanket_lab.errors import CriticalityViolated, InvalidParameter, InvalidSequence
from blanket_lab.graph_gen import (CRITICAL_LAW, DegenerateWeights, InfeasibleSurplus, admissible_pairs,
                                   admissible_tuples, components_with_surplus, count_admissible_tuples,
                                   critical_p, degree_law_ratio, glue, is_simple, labelled_permitted_edges,
                                   largest_component, sample_configuration_model, sample_connected_gmp,
                                   sample_degrees, sample_er_critical, sample_prescribed_connected,
                                   sample_tilted_tree)
from blanket_lab.graph_core import is_connected
from blanket_lab.tree_gen import sample_conditioned_gw, tree_from_child_counts


def test_er_edge_count():
    n, lam = 400, 1.0
    p = critical_p(n, lam)
    counts = [sample_er_critical(n, lam, s).n_edges for s in range(200)]
    mean = p * n * (n - 1) / 2
    assert abs(np.mean(counts) - mean) < 3 * math.sqrt(mean / 200)
    g = sample_er_critical(n, lam, 1)
    assert is_simple(g)
    with pytest.raises(InvalidParameter):
        sample_er_critical(1, 0.0, 1)


def test_components_against_networkx():
    g = sample_er_critical(300, 0.5, 4)
    spec = components_with_surplus(g)
    h = nx.Graph()
    h.add_nodes_from(range(g.n_vertices))
    h.add_edges_from(zip(g.u.tolist(), g.v.tolist()))
    comps = sorted((len(c) for c in nx.connected_components(h)), reverse=True)
    assert spec.sizes.tolist() == comps
    biggest = max(nx.connected_components(h), key=lambda c: (len(c), -min(c)))
    assert set(spec.members(0).tolist()) == biggest
    sub = h.subgraph(biggest)
    assert spec.surpluses[0] == sub.number_of_edges() - len(biggest) + 1
    lc, ids = largest_component(g)
    assert lc.n_vertices == comps[0] and is_connected(lc)


def test_tilted_tree_area_is_permitted_edge_count():
    for s in range(10):
        tt = sample_tilted_tree(12, 0.05, s, pool_size=200)
        assert tt.tree.n_vertices == 12
        assert tt.area == len(labelled_permitted_edges(tt.tree))


def test_tilted_tree_rejects_degenerate_pool():
    with pytest.raises(DegenerateWeights):
        sample_tilted_tree(40, 0.9, 1, pool_size=100)
    with pytest.raises(InvalidParameter):
        sample_tilted_tree(5, 1.0, 1)


def test_connected_gmp_structure():
    s = sample_connected_gmp(20, 0.1, 3, pool_size=300)
    assert is_connected(s.graph) and is_simple(s.graph)
    assert s.graph.n_edges == 19 + s.surplus


def test_connected_gmp_triangle_probability():
    # connected graphs on 3 labelled vertices: three paths (p^2 q) and the triangle (p^3)
    p, n = 0.4, 4000
    tri = sum(sample_connected_gmp(3, p, s, pool_size=200).surplus for s in range(n))
    ref = p / (3 - 2 * p)
    assert abs(tri / n - ref) < 3 * math.sqrt(ref * (1 - ref) / n) + 2e-3


def test_configuration_model_keeps_degrees():
    d = np.array([3, 1, 2, 2, 4, 2])
    g = sample_configuration_model(d, 5)
    # a self-loop contributes 2 to its vertex's mass
    assert g.mu.tolist() == d.tolist()
    with pytest.raises(InvalidSequence):
        sample_configuration_model([1, 2], 0)


def test_degree_laws():
    assert abs(degree_law_ratio(CRITICAL_LAW) - 1.0) < 1e-12
    d = sample_degrees(CRITICAL_LAW, 1000, 3)
    assert d.sum() % 2 == 0 and set(d.tolist()) <= {1, 3}
    with pytest.raises(InvalidSequence):
        sample_degrees(CRITICAL_LAW, 1001, 3)
    with pytest.raises(CriticalityViolated):
        sample_degrees({1: 0.5, 2: 0.5}, 100, 1)
    with pytest.raises(InvalidSequence):
        sample_degrees({1: 0.5, 3: 0.4}, 100, 1)


def _admissible_by_definition(t):
    par = t.parent
    rank = t.preorder_rank
    out = []
    for x in t.leaves():
        for y in t.leaves():
            if x == y or par[x] < 0 or par[y] < 0 or par[par[x]] < 0 or par[par[y]] < 0:
                continue
            gx, gy = par[par[x]], par[par[y]]
            root_path = set()
            v = gx
            while v >= 0:
                root_path.add(int(v))
                v = par[v]
            if rank[par[x]] < rank[par[y]] and int(gy) in root_path:
                out.append((int(x), int(y)))
    return sorted(out, key=lambda p: (rank[p[0]], rank[p[1]]))


def test_admissible_pairs_match_definition():
    for s in range(30):
        t = sample_conditioned_gw("poisson1", 14, s)
        assert admissible_pairs(t) == _admissible_by_definition(t)
    assert admissible_pairs(tree_from_child_counts([1, 1, 0])) == []


def test_admissible_tuples():
    t = sample_conditioned_gw("geometric", 16, 2)
    pairs = admissible_pairs(t)
    assert count_admissible_tuples(t, 1) == len(pairs)
    chain = admissible_tuples(t, 2, chain=True)
    free = admissible_tuples(t, 2, chain=False)
    assert set(chain) <= set(free)
    for z in free:
        assert len({v for p in z for v in p}) == 4
    assert admissible_tuples(t, 0) == [()]
    with pytest.raises(InfeasibleSurplus):
        admissible_tuples(t, 5)


def test_glue_replaces_leaves_by_parent_edges():
    t = tree_from_child_counts([2, 1, 0, 1, 0])
    keep, edges = glue(t, [(2, 4)])
    assert sorted(keep) == [0, 1, 3]
    assert sorted(edges) == [(0, 1), (0, 3), (1, 3)]


@pytest.mark.parametrize("d", [(1, 1, 2, 2), (1, 2, 2, 2, 3), (1, 2, 2, 3, 3, 3)])
def test_prescribed_sample_has_requested_degrees(d):
    for s in range(5):
        out = sample_prescribed_connected(d, s)
        assert out.graph.mu.tolist() == list(d)
        assert is_connected(out.graph)
        assert out.surplus == (sum(d) - 2 * (len(d) - 1)) // 2


def test_prescribed_sample_validation():
    with pytest.raises(InvalidSequence):
        sample_prescribed_connected((2, 1, 1), 0)
    with pytest.raises(InfeasibleSurplus):
        sample_prescribed_connected((1, 1, 1, 2), 0)


def test_pool_mode_runs():
    out = sample_prescribed_connected((1, 2, 2, 2, 3), 1, pool_size=200)
    assert out.ess > 0 and out.graph.n_edges == 5
