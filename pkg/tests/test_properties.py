import numpy as np
from hypothesis import given, settings, strategies as st

from blanket_lab.excursion_lab import (excursion_to_tree, glue_continuum, sample_excursion, theta_scale)
from blanket_lab.experiment_harness import ks_statistic
from blanket_lab.graph_core import build_graph
from blanket_lab.metric_compare import StepPath, prokhorov_distance, skorokhod_j1, uniform_distance
from blanket_lab.rng import derive_seed
from blanket_lab.tree_gen import (contour_process, cycle_lemma_rotation, depth_first_walk_and_area,
                                  permitted_edges, sample_conditioned_gw, tree_distance_matrix)
from blanket_lab.walk_engine import blanket_time_variable, run_walk

SETTINGS = settings(max_examples=40, deadline=None)


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(2, 12))
    edges = [(draw(st.integers(0, i - 1)), i, draw(st.floats(0.1, 5.0))) for i in range(1, n)]
    for _ in range(draw(st.integers(0, 6))):
        a, b = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        if a != b:
            edges.append((a, b, draw(st.floats(0.1, 5.0))))
    return build_graph(edges, multigraph=True)


@st.composite
def finite_metric(draw, n):
    pts = np.array(draw(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=n, max_size=n)))
    return np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))


@SETTINGS
@given(connected_graphs(), st.integers(0, 2 ** 32), st.integers(0, 400))
def test_occupation_identity(g, seed, t):
    p = run_walk(g, 0, t, seed)
    lt = p.local_times(g, t)
    assert abs(np.dot(g.mu, lt.values) - t) < 1e-8 * max(t, 1)


@SETTINGS
@given(connected_graphs(), st.integers(0, 2 ** 32))
def test_blanket_dominates_cover_and_is_monotone(g, seed):
    prev = 0
    for eps in (0.1, 0.4, 0.8):
        r = blanket_time_variable(g, 0, eps, 10 ** 6, seed)
        assert r.tau_blanket >= r.cover_time and r.tau_blanket >= prev
        prev = r.tau_blanket


@SETTINGS
@given(st.integers(1, 60), st.integers(0, 2 ** 32))
def test_tree_contour_and_area(n, seed):
    t = sample_conditioned_gw("poisson1", n, seed)
    d = tree_distance_matrix(t)
    c = contour_process(t)
    v = c.values
    i, j = sorted(np.random.default_rng(seed).integers(0, len(v), 2))
    assert d[c.vertices[i], c.vertices[j]] == v[i] + v[j] - 2 * v[i:j + 1].min()
    assert depth_first_walk_and_area(t).area == len(permitted_edges(t))


@SETTINGS
@given(st.lists(st.integers(0, 5), min_size=1, max_size=40), st.randoms())
def test_cycle_lemma_gives_a_valid_rotation(c, rnd):
    # pad with leaves until the counts sum to length - 1, then shuffle
    c = c[:sum(c) + 1] + [0] * max(0, sum(c) + 1 - len(c))
    while sum(c) != len(c) - 1:
        c[c.index(max(c))] -= 1
    rnd.shuffle(c)
    r = cycle_lemma_rotation(np.array(c))
    walk = np.cumsum(np.roll(np.array(c), -r) - 1)
    assert np.all(walk[:-1] >= 0) and walk[-1] == -1


@SETTINGS
@given(st.integers(0, 2 ** 32), st.floats(1.0, 9.0), st.floats(1.0, 9.0))
def test_theta_composition(seed, a, b):
    e = sample_excursion(1.0, 64, seed)
    x, y = theta_scale(theta_scale(e, a), b), theta_scale(e, a * b)
    assert np.allclose(x.values, y.values, rtol=1e-12) and abs(x.zeta - y.zeta) < 1e-12 * y.zeta


@SETTINGS
@given(st.integers(0, 2 ** 32), st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), max_size=4))
def test_gluing_never_increases_distance(seed, pairs):
    t = excursion_to_tree(sample_excursion(1.0, 80, seed), 20)
    pairs = [(a % t.n_reps, b % t.n_reps) for a, b in pairs]
    d = glue_continuum(t, pairs).metric
    assert np.all(d <= t.metric() + 1e-12)
    assert np.allclose(d, d.T)


@SETTINGS
@given(finite_metric(4), st.lists(st.floats(0, 1), min_size=4, max_size=4),
       st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_prokhorov_basic_properties(d, a, b):
    mu, nu = np.array(a), np.array(b)
    if mu.sum() == 0 or nu.sum() == 0:
        return
    mu, nu = mu / mu.sum(), nu / nu.sum()
    assert prokhorov_distance(mu, mu, d).value < 1e-6
    x, y = prokhorov_distance(mu, nu, d).value, prokhorov_distance(nu, mu, d).value
    assert abs(x - y) < 1e-6 and 0 <= x <= 1


@SETTINGS
@given(finite_metric(3), st.lists(st.floats(0.01, 0.99), max_size=3, unique=True),
       st.lists(st.floats(0.01, 0.99), max_size=3, unique=True), st.integers(0, 2 ** 32))
def test_j1_bounded_by_uniform(d, ta, tb, seed):
    rng = np.random.default_rng(seed)
    p = StepPath(np.concatenate([[0.0], sorted(ta)]), rng.integers(0, 3, len(ta) + 1), 1.0)
    q = StepPath(np.concatenate([[0.0], sorted(tb)]), rng.integers(0, 3, len(tb) + 1), 1.0)
    u = uniform_distance(p, q, d)
    for combine in ("sum", "max"):
        j = skorokhod_j1(p, q, d, combine)
        assert -1e-12 <= j <= u + 1e-12
        assert abs(j - skorokhod_j1(q, p, d, combine)) < 1e-9
    assert skorokhod_j1(p, p, d) == 0


@SETTINGS
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
       st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_ks_statistic_range_and_symmetry(a, b):
    k = ks_statistic(a, b)
    assert 0 <= k <= 1 and k == ks_statistic(b, a)
    assert ks_statistic(a, a) == 0


@SETTINGS
@given(st.integers(0, 2 ** 63), st.lists(st.one_of(st.integers(), st.text(max_size=5)), max_size=4))
def test_derive_seed_is_stable(master, labels):
    s = derive_seed(master, *labels)
    assert s == derive_seed(master, *labels) and 0 <= s < 2 ** 64
