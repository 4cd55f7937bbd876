import math

import numpy as np
import pytest

from blanket_lab.errors import HorizonTooShort, InvalidExcursion, InvalidParameter, ParseError
from blanket_lab.excursion_lab import (Excursion, PointSet, ResolutionTooCoarse, excursion_batch,
                                       excursion_to_tree, four_point_violations, glue_continuum,
                                       point_to_reps, read_excursion, sample_excursion, sample_pointset,
                                       sample_tilted_excursion, simulate_reflected_parabolic, theta_scale,
                                       write_excursion)
from blanket_lab.tree_gen import contour_process, sample_conditioned_gw, tree_distance_matrix
from blanket_lab.walk_engine import blanket_time_variable
from oracles import glued_brute


def test_excursion_shape_and_reproducibility():
    e = sample_excursion(2.0, 256, 4)
    assert e.N == 256 and e.zeta == 2.0
    assert e.values[0] == 0 and e.values[-1] == 0 and np.all(e.values[1:-1] > 0)
    assert np.array_equal(e.values, sample_excursion(2.0, 256, 4).values)


def test_excursion_mean_area():
    # E integral of a normalized excursion = sqrt(pi/8); a sampled bridge
    # misses its minimum by about zeta(1/2)/sqrt(2 pi N) = 0.5826/sqrt(N)
    for n in (256, 2048):
        b = excursion_batch(4000, n, 1)
        areas = b.sum(axis=1) / n
        ref = math.sqrt(math.pi / 8) - 0.5826 / math.sqrt(n)
        assert abs(areas.mean() - ref) < 3 * areas.std() / math.sqrt(4000) + 0.003


def test_excursion_validation():
    with pytest.raises(InvalidExcursion):
        Excursion.from_values([0.0, 1.0, 0.0, 0.5, 0.0])
    with pytest.raises(InvalidExcursion):
        Excursion.from_values([0.0, 1.0, 1.0])
    with pytest.raises(InvalidParameter):
        sample_excursion(0.0, 10, 1)


def test_theta_composition_exact():
    e = sample_excursion(1.0, 128, 2)
    a = theta_scale(theta_scale(e, 2), 3)
    b = theta_scale(e, 6)
    assert a.zeta == b.zeta == 6.0
    assert np.array_equal(a.values, b.values)
    back = theta_scale(theta_scale(e, 4), 0.25)
    assert np.array_equal(back.values, e.values) and back.zeta == e.zeta


def test_theta_scales_integral():
    e = sample_excursion(1.0, 128, 5)
    assert abs(theta_scale(e, 4).integral() - 8 * e.integral()) < 1e-12


def test_tree_metric_is_coded_distance():
    e = sample_excursion(1.0, 200, 3)
    t = excursion_to_tree(e, 50)
    d = t.metric()
    f = t.heights
    for a in range(0, t.n_reps, 3):
        for b in range(a, t.n_reps, 4):
            i, j = sorted((t.first_sample[a], t.first_sample[b]))
            assert abs(d[a, b] - (f[i] + f[j] - 2 * f[i:j + 1].min())) < 1e-12
            assert abs(t.distance(a, b) - d[a, b]) < 1e-12
    assert four_point_violations(d, 5000, 1) == 0
    assert abs(t.mass.sum() - 1.0) < 1e-12


def test_tree_graph_resistance_matches_metric():
    from blanket_lab.graph_core import graph_metric
    t = excursion_to_tree(sample_excursion(1.0, 100, 6), 40)
    r = graph_metric(t.to_graph(), "resistance").values
    assert np.allclose(r, t.metric(), atol=1e-9)


def test_resolution_checks():
    e = sample_excursion(1.0, 16, 1)
    with pytest.raises(ResolutionTooCoarse):
        excursion_to_tree(e, 32)
    with pytest.raises(ResolutionTooCoarse):
        excursion_to_tree(e, 0)


def test_contour_coded_tree_recovers_plane_tree():
    pt = sample_conditioned_gw("poisson1", 40, 9)
    c = contour_process(pt)
    t = excursion_to_tree(Excursion.from_contour(c.values.astype(float)))
    assert t.n_reps == pt.n_vertices
    vert = c.vertices[t.first_sample]
    dt = tree_distance_matrix(pt)
    assert np.array_equal(t.metric(), dt[np.ix_(vert, vert)].astype(float))


def test_point_to_reps_lands_on_root_path():
    e = sample_excursion(1.0, 400, 2)
    t = excursion_to_tree(e, 100)
    ps = sample_pointset(e, 5.0, 3)
    for tt, x in ps.points:
        u, v = point_to_reps(t, tt, x)
        assert v in t.ancestors(u)
        assert t.rep_heights[v] <= t.rep_heights[u] + 1e-12


def test_glue_empty_and_single():
    e = sample_excursion(1.0, 100, 4)
    t = excursion_to_tree(e, 30)
    same = glue_continuum(t, PointSet(np.zeros((0, 2)), 1.0))
    assert np.allclose(same.metric, t.metric(), atol=1e-12)
    a, b = 3, 20
    one = glue_continuum(t, [(a, b)])
    assert one.metric[a, b] == 0
    assert np.all(one.metric <= t.metric() + 1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_glue_matches_chain_formula(k):
    rng = np.random.default_rng(k)
    for s in range(4):
        t = excursion_to_tree(sample_excursion(1.0, 60, 10 * k + s), 12)
        pairs = [tuple(int(x) for x in rng.choice(t.n_reps, 2, replace=False)) for _ in range(k)]
        out = glue_continuum(t, pairs)
        assert np.allclose(out.metric, glued_brute(t.metric(), pairs), atol=1e-12)


def test_tilted_excursion_has_larger_area():
    base = np.mean([sample_excursion(1.0, 128, s).integral() for s in range(200)])
    tilted = np.mean([sample_tilted_excursion(1.0, 128, s, pool_size=200).excursion.integral()
                      for s in range(200)])
    assert tilted > base


def test_reflected_parabolic_excursions():
    out = simulate_reflected_parabolic(0.0, horizon=10.0, seed=1)
    assert np.all(np.diff(out.lengths) <= 0)
    assert out.marks.dtype.kind == "i" and np.all(out.marks >= 0)
    with pytest.raises(InvalidParameter):
        simulate_reflected_parabolic(0.0, dt=1.0, horizon=10.0)
    with pytest.raises(HorizonTooShort):
        simulate_reflected_parabolic(50.0, horizon=1.0, seed=1, max_doublings=0)


def test_excursion_roundtrip(tmp_path):
    e = sample_excursion(1.5, 64, 7)
    write_excursion(e, tmp_path / "e.csv")
    f = read_excursion(tmp_path / "e.csv")
    assert f.zeta == e.zeta and np.array_equal(f.values, e.values)
    (tmp_path / "bad.csv").write_text("zeta,N\n1.0,4\n0\n1\n0\n")
    with pytest.raises(ParseError):
        read_excursion(tmp_path / "bad.csv")


def test_theta_blanket_identity_pathwise():
    # with a shared walk seed, Theta_a scales every holding time by a^{3/2}
    e = sample_excursion(1.0, 256, 8)
    a = 4.0
    t1, t2 = excursion_to_tree(e), excursion_to_tree(theta_scale(e, a))
    g1, h1 = t1.walk_data()
    g2, h2 = t2.walk_data()
    for s in range(5):
        r1, _, c1 = blanket_time_variable(g1, t1.root, 0.4, 10 ** 8, s, hold=h1, return_counts=True)
        r2, _, c2 = blanket_time_variable(g2, t2.root, 0.4 / a, 10 ** 8, s, hold=h2, return_counts=True)
        assert r1.tau_blanket == r2.tau_blanket
        assert abs(c2 - a ** 1.5 * c1) < 1e-9 * c2
