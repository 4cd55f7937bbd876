"""Critical random graph ensembles: Erdos-Renyi, tilted trees and connected
G(m, p), the configuration model, and connected graphs with a prescribed
degree sequence built by gluing admissible leaf pairs."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba as nb
import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import (BlanketLabError, CriticalityViolated, InvalidParameter, InvalidSequence,
                     SamplingBudgetExceeded)
from .graph_core import WeightedGraph, graph_from_arrays, induced_subgraph
from .rng import derive_seed, generator, next_double, next_u64
from .tree_gen import PlaneTree, tree_from_child_counts, tree_from_parents, uniform_plane_tree_with_ecd


class DegenerateWeights(BlanketLabError):
    pass


class NoAdmissibleTuples(BlanketLabError):
    pass


class InfeasibleSurplus(InvalidParameter):
    pass


# ---------------------------------------------------------------- Erdos-Renyi

def critical_p(n, lam):
    return 1.0 / n + lam * n ** (-4.0 / 3.0)


def sample_er_critical(n: int, lam: float, seed) -> WeightedGraph:
    """G(n, p) with p = 1/n + lam n^(-4/3); may be disconnected."""
    if n < 2:
        raise InvalidParameter("n must be at least 2")
    p = critical_p(n, lam)
    if not 0.0 < p < 1.0:
        raise InvalidParameter(f"edge probability {p} outside (0, 1)")
    rng = generator(seed)
    n_pairs = n * (n - 1) // 2
    m = int(rng.binomial(n_pairs, p))
    # m distinct pair indices, uniform: same law as independent coin flips given the count
    idx = _distinct_indices(rng, n_pairs, m)
    u, v = _unrank_pairs(idx, n)
    return graph_from_arrays(n, u, v, require_connected=False)


def _distinct_indices(rng, population, k):
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if k > population // 4:
        return np.sort(rng.choice(population, size=k, replace=False))
    out = np.unique(rng.integers(0, population, size=k))
    while len(out) < k:
        extra = rng.integers(0, population, size=k - len(out))
        out = np.unique(np.concatenate([out, extra]))
    return out


def _unrank_pairs(idx, n):
    """Index r of pair (i<j) in row-major order of the strict upper triangle."""
    idx = np.asarray(idx, dtype=np.int64)
    # row i starts at i*n - i*(i+1)/2
    i = (n - 2 - np.floor(np.sqrt(-8.0 * idx + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    start = i * n - i * (i + 1) // 2
    # guard against floating point slips at row boundaries
    low = idx < start
    i[low] -= 1
    start = i * n - i * (i + 1) // 2
    nxt = (i + 1) * n - (i + 1) * (i + 2) // 2
    high = idx >= nxt
    i[high] += 1
    start = i * n - i * (i + 1) // 2
    j = idx - start + i + 1
    return i, j


@dataclass(frozen=True)
class ComponentSpectrum:
    sizes: np.ndarray
    surpluses: np.ndarray
    labels: np.ndarray      # component rank of each vertex (0 = largest)
    min_vertex: np.ndarray

    def members(self, rank=0) -> np.ndarray:
        return np.flatnonzero(self.labels == rank)


def components_with_surplus(g: WeightedGraph) -> ComponentSpectrum:
    n = g.n_vertices
    adj = sp.csr_matrix((np.ones_like(g.weights), g.indices, g.indptr), shape=(n, n))
    n_comp, lab = csgraph.connected_components(adj, directed=False)
    sizes = np.bincount(lab, minlength=n_comp)
    edges = np.bincount(lab[g.u], minlength=n_comp)
    minv = np.full(n_comp, n, dtype=np.int64)
    np.minimum.at(minv, lab, np.arange(n))
    order = np.lexsort((minv, -sizes))
    rank = np.empty(n_comp, dtype=np.int64)
    rank[order] = np.arange(n_comp)
    return ComponentSpectrum(sizes[order], (edges - sizes + 1)[order], rank[lab], minv[order])


def largest_component(g: WeightedGraph):
    """Largest component as a connected graph plus the original vertex ids."""
    spec = components_with_surplus(g)
    return induced_subgraph(g, spec.members(0))


# ----------------------------------------------------- tilted trees, G(m, p)

@nb.njit(cache=True)
def _prufer_parents(code, m):
    """Decode a Prufer code to a parent array rooted at vertex 0."""
    degree = np.ones(m, dtype=np.int64)
    for a in code:
        degree[a] += 1
    nbr_ptr = np.zeros(m + 1, dtype=np.int64)
    eu = np.empty(m - 1, dtype=np.int64)
    ev = np.empty(m - 1, dtype=np.int64)
    ptr = 0
    while ptr < m and degree[ptr] != 1:
        ptr += 1
    leaf = ptr
    k = 0
    for a in code:
        eu[k] = leaf
        ev[k] = a
        k += 1
        degree[a] -= 1
        if a < ptr and degree[a] == 1:
            leaf = a
        else:
            ptr += 1
            while ptr < m and degree[ptr] != 1:
                ptr += 1
            leaf = ptr
    # last edge joins the remaining leaf with m-1
    eu[k] = leaf
    ev[k] = m - 1
    for e in range(m - 1):
        nbr_ptr[eu[e] + 1] += 1
        nbr_ptr[ev[e] + 1] += 1
    for x in range(m):
        nbr_ptr[x + 1] += nbr_ptr[x]
    fill = nbr_ptr[:-1].copy()
    nbr = np.empty(2 * (m - 1), dtype=np.int64)
    for e in range(m - 1):
        nbr[fill[eu[e]]] = ev[e]
        fill[eu[e]] += 1
        nbr[fill[ev[e]]] = eu[e]
        fill[ev[e]] += 1
    parent = np.full(m, -1, dtype=np.int64)
    stack = np.empty(m, dtype=np.int64)
    stack[0] = 0
    sp_ = 1
    seen = np.zeros(m, dtype=np.bool_)
    seen[0] = True
    while sp_ > 0:
        sp_ -= 1
        x = stack[sp_]
        for j in range(nbr_ptr[x], nbr_ptr[x + 1]):
            y = nbr[j]
            if not seen[y]:
                seen[y] = True
                parent[y] = x
                stack[sp_] = y
                sp_ += 1
    return parent


@nb.njit(cache=True)
def _labelled_area(parent):
    """Area of the depth-first walk from vertex 0, children in increasing label order."""
    m = len(parent)
    nchild = np.zeros(m, dtype=np.int64)
    for v in range(m):
        if parent[v] >= 0:
            nchild[parent[v]] += 1
    ptr = np.zeros(m + 1, dtype=np.int64)
    for v in range(m):
        ptr[v + 1] = ptr[v] + nchild[v]
    fill = ptr[:-1].copy()
    kids = np.empty(max(m - 1, 1), dtype=np.int64)
    for v in range(m):  # increasing v keeps each child list sorted
        p = parent[v]
        if p >= 0:
            kids[fill[p]] = v
            fill[p] += 1
    stack = np.empty(m, dtype=np.int64)
    stack[0] = 0
    sp_ = 1
    area = 0
    i = 0
    while sp_ > 0:
        area += sp_ - 1
        sp_ -= 1
        v = stack[sp_]
        i += 1
        for j in range(ptr[v + 1] - 1, ptr[v] - 1, -1):
            stack[sp_] = kids[j]
            sp_ += 1
    return area


@nb.njit(cache=True)
def _sir_tilted(m, log_tilt, pool_size, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    codes = np.empty((pool_size, max(m - 2, 0)), dtype=np.int64)
    logw = np.empty(pool_size)
    for i in range(pool_size):
        for j in range(m - 2):
            codes[i, j] = np.int64(next_u64(state) % np.uint64(m))
        par = _prufer_parents(codes[i], m)
        logw[i] = log_tilt * _labelled_area(par)
    top = logw.max()
    w = np.exp(logw - top)
    s1 = w.sum()
    s2 = (w * w).sum()
    u = next_double(state) * s1
    acc = 0.0
    pick = pool_size - 1
    for i in range(pool_size):
        acc += w[i]
        if u < acc:
            pick = i
            break
    return codes[pick].copy(), s1 * s1 / s2


@dataclass(frozen=True)
class TiltedTree:
    tree: PlaneTree
    area: int
    ess: float


def sample_tilted_tree(m: int, p: float, seed, pool_size: int = 1000) -> TiltedTree:
    """Labelled tree on 0..m-1 with P(T) proportional to (1-p)^(-a(T)).

    Self-normalized importance resampling over ``pool_size`` uniform labelled
    trees (Prufer codes). Vertex 0 plays the role of the exploration start.
    """
    if m < 2:
        raise InvalidParameter("m must be at least 2")
    if not 0.0 < p < 1.0:
        raise InvalidParameter("p must lie in (0, 1)")
    if pool_size < 1:
        raise InvalidParameter("pool_size must be positive")
    code, ess = _sir_tilted(m, -math.log1p(-p), int(pool_size), np.uint64(int(seed) & (2 ** 64 - 1)))
    if ess < 10 and pool_size >= 10:
        raise DegenerateWeights(f"effective sample size {ess:.2f} below 10")
    parent = _prufer_parents(code, m)
    return TiltedTree(tree_from_parents(parent), int(_labelled_area(parent)), float(ess))


def labelled_permitted_edges(t: PlaneTree):
    """Permitted edges of a labelled tree explored from vertex 0 in label order."""
    from .tree_gen import permitted_edges
    return permitted_edges(t)


@dataclass(frozen=True)
class ConnectedSample:
    graph: WeightedGraph
    surplus: int
    ess: float


def sample_connected_gmp(m: int, p: float, seed, pool_size: int = 1000) -> ConnectedSample:
    """Connected graph with the law of G(m, p) given connectivity: a tilted
    tree plus each permitted edge independently with probability p."""
    tt = sample_tilted_tree(m, p, seed, pool_size)
    rng = generator(derive_seed(seed, "permitted-edges"))
    extra = [e for e in labelled_permitted_edges(tt.tree) if rng.random() < p]
    par = tt.tree.parent
    v = np.flatnonzero(par >= 0)
    u_all = np.concatenate([par[v], [a for a, _ in extra]]).astype(np.int64)
    v_all = np.concatenate([v, [b for _, b in extra]]).astype(np.int64)
    return ConnectedSample(graph_from_arrays(m, u_all, v_all), len(extra), tt.ess)


# --------------------------------------------------------- configuration model

def sample_configuration_model(d, seed) -> WeightedGraph:
    """Uniform pairing of half-edges; self-loops and multi-edges kept."""
    d = np.asarray(d, dtype=np.int64)
    if d.ndim != 1 or len(d) < 2 or np.any(d < 0):
        raise InvalidSequence("degree sequence must be nonnegative with at least 2 entries")
    if d.sum() % 2:
        raise InvalidSequence("degree sum must be even")
    stubs = np.repeat(np.arange(len(d)), d)
    generator(seed).shuffle(stubs)
    return graph_from_arrays(len(d), stubs[0::2], stubs[1::2], multigraph=True,
                             require_connected=False)


def is_simple(g: WeightedGraph) -> bool:
    if np.any(g.u == g.v):
        return False
    a, b = np.minimum(g.u, g.v), np.maximum(g.u, g.v)
    return len(np.unique(a * g.n_vertices + b)) == len(a)


CRITICAL_LAW = {1: 0.75, 3: 0.25}


def degree_law_ratio(law) -> float:
    k = np.array(list(law.keys()), dtype=np.float64)
    p = np.array(list(law.values()), dtype=np.float64)
    return float(np.dot(k * (k - 1), p) / np.dot(k, p))


def sample_degrees(law, n, seed, lam=0.0, check=True, max_tries=1000) -> np.ndarray:
    """i.i.d. degrees from a finite law, conditioned on an even sum.

    With ``check`` the law must satisfy E[D(D-1)]/E[D] = 1 + lam n^(-1/3) to 1e-9.
    """
    law = {int(k): float(v) for k, v in law.items()}
    if abs(sum(law.values()) - 1.0) > 1e-9 or min(law) < 1:
        raise InvalidSequence("degree law must be a probability vector on positive integers")
    if check:
        target = 1.0 + lam * n ** (-1.0 / 3.0)
        if abs(degree_law_ratio(law) - target) > 1e-9:
            raise CriticalityViolated(f"E[D(D-1)]/E[D] = {degree_law_ratio(law)} != {target}")
    ks = np.array([k for k, v in law.items() if v > 0])
    ps = np.array([law[k] for k in ks])
    if n % 2 and np.all(ks % 2):
        raise InvalidSequence("odd n with only odd degrees cannot give an even degree sum")
    rng = generator(seed)
    for _ in range(max_tries):
        d = rng.choice(ks, size=n, p=ps)
        if d.sum() % 2 == 0:
            return d
    raise SamplingBudgetExceeded("could not draw an even degree sum")


# ------------------------------------------------ admissible pairs and gluing

def _df_data(t: PlaneTree):
    rank = t.preorder_rank
    size = t.subtree_size
    par = t.parent
    gpar = np.where(par >= 0, par[np.maximum(par, 0)], -1)
    gpar[par < 0] = -1
    return rank, size, par, gpar


@nb.njit(cache=True)
def _admissible(leaves, rank, size, par, gpar):
    out = []
    for x in leaves:
        gx = gpar[x]
        if gx < 0:
            continue
        for y in leaves:
            if y == x:
                continue
            gy = gpar[y]
            if gy < 0 or not rank[par[x]] < rank[par[y]]:
                continue
            # gy on the root path of gx: gy is an ancestor-or-self of gx
            if rank[gy] <= rank[gx] < rank[gy] + size[gy]:
                out.append((x, y))
    return out


def admissible_pairs(t: PlaneTree) -> list[tuple[int, int]]:
    """Ordered leaf pairs (x, y): par(x) explored before par(y) and gpar(y) on
    the path from the root to gpar(x). A leaf at depth 1 has no grandparent,
    so pairs involving one are excluded. Output is sorted by DF rank."""
    rank, size, par, gpar = _df_data(t)
    leaves = t.leaves()
    leaves = leaves[np.argsort(rank[leaves])]
    if len(leaves) < 2:
        return []
    return [(int(a), int(b)) for a, b in _admissible(leaves, rank, size, par, gpar)]


def _precedes(p, q, rank):
    """(x1, y1) << (x2, y2)."""
    return p[0] == q[0] or (rank[p[0]] < rank[q[0]] and rank[p[1]] < rank[q[1]])


def admissible_tuples(t: PlaneTree, k: int, chain: bool = True):
    """k-sets of admissible pairs on 2k distinct leaves, each sorted by <<.

    With ``chain`` the set must be totally ordered by <<, which the labelling
    step requires; otherwise any k-subset is kept (sorted by x's DF rank).
    """
    if k > 4:
        raise InfeasibleSurplus("surplus above 4 is not supported")
    pairs = admissible_pairs(t)
    if k == 0:
        return [()]
    rank = t.preorder_rank
    out = []
    for combo in itertools.combinations(pairs, k):
        leaves = {v for pr in combo for v in pr}
        if len(leaves) != 2 * k:
            continue
        combo = tuple(sorted(combo, key=lambda pr: (rank[pr[0]], rank[pr[1]])))
        if chain and not all(_precedes(combo[i], combo[i + 1], rank) for i in range(k - 1)):
            continue
        out.append(combo)
    return out


def count_admissible_tuples(t: PlaneTree, k: int, chain: bool = True) -> int:
    if k == 1:
        return len(admissible_pairs(t))
    return len(admissible_tuples(t, k, chain))


def glue(t: PlaneTree, z):
    """L(theta, z): drop every x_i, y_i and join par(x_i) with par(y_i).
    Returns (kept vertex ids, edge list in the original ids)."""
    drop = {v for pr in z for v in pr}
    edges = [(int(t.parent[v]), int(v)) for v in range(t.n_vertices)
             if t.parent[v] >= 0 and v not in drop]
    edges += [(int(t.parent[x]), int(t.parent[y])) for x, y in z]
    keep = [v for v in range(t.n_vertices) if v not in drop]
    return keep, edges


def _children_sequence(d_tilde):
    d = np.asarray(d_tilde, dtype=np.int64)
    if d.ndim != 1 or len(d) < 2 or np.any(d < 1):
        raise InvalidSequence("degrees must be positive")
    if d[0] != 1:
        raise InvalidSequence("the lowest-labelled vertex must have degree 1")
    mt = len(d)
    excess = int(d.sum()) - 2 * (mt - 1)
    if excess < 0 or excess % 2:
        raise InfeasibleSurplus("degree sum must equal 2(m-1) + 2k with k >= 0")
    k = excess // 2
    c = np.concatenate([d[1:] - 1, np.zeros(2 * k, dtype=np.int64)])
    return d, k, c


@dataclass(frozen=True)
class PrescribedSample:
    graph: WeightedGraph
    surplus: int
    tree: PlaneTree
    tuple_: tuple
    ess: float


def sample_prescribed_connected(d_tilde, seed, pool_size=None, chain=True,
                                max_proposals=10 ** 6) -> PrescribedSample:
    """Connected graph with degree sequence ``d_tilde`` (vertex 0 has degree 1).

    A pair (theta, z) is drawn uniformly from trees with the induced children
    distribution and admissible k-tuples z, x_i/y_i receive the top labels,
    the remaining labels are assigned uniformly consistent with child counts,
    the pairs are glued and vertex 0 is attached to the root.

    ``pool_size=None`` draws theta exactly by rejection (weights are bounded);
    an integer selects importance resampling over that many uniform trees.
    """
    d, k, c = _children_sequence(d_tilde)
    mt = len(d)
    ecd = np.bincount(c)
    rng = generator(seed)
    ess = float("nan")

    def propose():
        return uniform_plane_tree_with_ecd(ecd, int(rng.integers(0, 2 ** 63)))

    if k == 0:
        theta, z = propose(), ()
    elif pool_size is None:
        s0 = int(ecd[0])
        bound = math.comb(s0, 2 * k) * math.factorial(2 * k) // math.factorial(k)
        for _ in range(max_proposals):
            theta = propose()
            tuples = admissible_tuples(theta, k, chain)
            if rng.random() * bound < len(tuples):
                z = tuples[int(rng.integers(0, len(tuples)))]
                break
        else:
            raise SamplingBudgetExceeded("no admissible tuple accepted within the budget")
    else:
        pool = [propose() for _ in range(int(pool_size))]
        w = np.array([count_admissible_tuples(th, k, chain) for th in pool], dtype=np.float64)
        if w.sum() == 0:
            raise NoAdmissibleTuples("no pool tree carries an admissible tuple")
        ess = float(w.sum() ** 2 / np.sum(w * w))
        theta = pool[int(rng.choice(len(pool), p=w / w.sum()))]
        tuples = admissible_tuples(theta, k, chain)
        z = tuples[int(rng.integers(0, len(tuples)))]

    # labels: x_i -> mt+2i-1, y_i -> mt+2i (1-based), others uniform by child count
    label = np.full(theta.n_vertices, -1, dtype=np.int64)
    for i, (x, y) in enumerate(z, start=1):
        label[x] = mt + 2 * i - 1
        label[y] = mt + 2 * i
    nch = theta.n_children()
    rest = np.flatnonzero(label < 0)
    for cnt in np.unique(nch[rest]):
        verts = rest[nch[rest] == cnt]
        labs = np.flatnonzero(d - 1 == cnt)
        labs = labs[labs >= 1] + 1  # 1-based labels 2..mt
        if len(labs) != len(verts):
            raise InvalidSequence("children sequence inconsistent with degrees")
        label[verts] = rng.permutation(labs)
    _, edges = glue(theta, z)
    u = [label[a] - 1 for a, _ in edges] + [0]
    v = [label[b] - 1 for _, b in edges] + [label[theta.root] - 1]
    # for k >= 2 two glued pairs can join the same parents; keep such outputs
    # representable instead of rejecting them
    a, b = np.minimum(u, v), np.maximum(u, v)
    simple = len(set(zip(a.tolist(), b.tolist()))) == len(a)
    g = graph_from_arrays(mt, u, v, multigraph=not simple)
    return PrescribedSample(g, k, theta, tuple(z), ess)
