"""Plane trees: conditioned Galton-Watson sampling, trees with a prescribed
children distribution, and the contour / depth-first encodings."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numba as nb
import numpy as np

from .errors import (InfeasibleSize, InvalidOffspringLaw, InvalidParameter, ParseError,
                     SamplingBudgetExceeded)
from .graph_core import WeightedGraph, graph_from_arrays
from .rng import generator

REJECTION_BUDGET = 10 ** 6


class NotTenable(InvalidParameter):
    pass


class IndexOutOfRange(InvalidParameter):
    pass


@dataclass(frozen=True, eq=False)
class PlaneTree:
    """Rooted ordered tree. ``child_ptr``/``child_idx`` hold the ordered
    children of each vertex in CSR form."""

    parent: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    root: int = 0

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    @property
    def n_edges(self) -> int:
        return len(self.parent) - 1

    def children(self, v) -> np.ndarray:
        return self.child_idx[self.child_ptr[v]:self.child_ptr[v + 1]]

    def n_children(self) -> np.ndarray:
        return np.diff(self.child_ptr)

    @cached_property
    def preorder(self) -> np.ndarray:
        return _preorder(self.child_ptr, self.child_idx, self.root)

    @cached_property
    def depth(self) -> np.ndarray:
        d = np.zeros(self.n_vertices, dtype=np.int64)
        for v in self.preorder[1:]:
            d[v] = d[self.parent[v]] + 1
        return d

    @cached_property
    def preorder_rank(self) -> np.ndarray:
        r = np.empty(self.n_vertices, dtype=np.int64)
        r[self.preorder] = np.arange(self.n_vertices)
        return r

    @cached_property
    def subtree_size(self) -> np.ndarray:
        s = np.ones(self.n_vertices, dtype=np.int64)
        for v in self.preorder[::-1][:-1]:
            s[self.parent[v]] += s[v]
        return s

    def is_ancestor(self, a, b) -> bool:
        """True when ``a`` lies on the root path of ``b`` (inclusive)."""
        ra, rb = self.preorder_rank[a], self.preorder_rank[b]
        return ra <= rb < ra + self.subtree_size[a]

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.n_children() == 0)

    def to_graph(self) -> WeightedGraph:
        v = np.flatnonzero(self.parent >= 0)
        return graph_from_arrays(self.n_vertices, self.parent[v], v)

    def child_counts_preorder(self) -> np.ndarray:
        return self.n_children()[self.preorder]

    def shape_key(self) -> tuple:
        """Child counts in preorder; identifies the plane tree up to relabelling."""
        return tuple(int(c) for c in self.child_counts_preorder())


@nb.njit(cache=True)
def _preorder(child_ptr, child_idx, root):
    n = len(child_ptr) - 1
    out = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    sp = 0
    stack[sp] = root
    sp += 1
    k = 0
    while sp > 0:
        sp -= 1
        v = stack[sp]
        out[k] = v
        k += 1
        for j in range(child_ptr[v + 1] - 1, child_ptr[v] - 1, -1):
            stack[sp] = child_idx[j]
            sp += 1
    # vertices on a cycle are unreachable from the root and stay out
    return out[:k]


@nb.njit(cache=True)
def _parents_from_counts(counts):
    """Parent array of the plane tree whose preorder child counts are ``counts``."""
    n = len(counts)
    parent = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    need = np.empty(n, dtype=np.int64)
    sp = 0
    for v in range(n):
        if v > 0:
            p = stack[sp - 1]
            parent[v] = p
            need[sp - 1] -= 1
            if need[sp - 1] == 0:
                sp -= 1
        if counts[v] > 0:
            stack[sp] = v
            need[sp] = counts[v]
            sp += 1
    return parent


def tree_from_parents(parent: Sequence[int], root: int | None = None) -> PlaneTree:
    """Plane tree from a parent array; children keep increasing-id order."""
    parent = np.asarray(parent, dtype=np.int64)
    n = len(parent)
    roots = np.flatnonzero(parent < 0)
    if len(roots) != 1:
        raise InvalidParameter("a tree needs exactly one root")
    if np.any(parent >= n):
        raise InvalidParameter("parent id out of range")
    nonroot = np.flatnonzero(parent >= 0)
    order = np.lexsort((nonroot, parent[nonroot]))
    child_idx = nonroot[order]
    child_ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(child_ptr, parent[nonroot] + 1, 1)
    child_ptr = np.cumsum(child_ptr)
    t = PlaneTree(parent, child_ptr, child_idx, int(roots[0]))
    if len(t.preorder) != n or len(np.unique(t.preorder)) != n:
        raise InvalidParameter("parent array contains a cycle")
    return t


def tree_from_child_counts(counts: Sequence[int]) -> PlaneTree:
    """Plane tree with vertices numbered in preorder from its child counts."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != len(counts) - 1 or np.any(counts < 0) or not _is_lukasiewicz(counts):
        raise InvalidParameter("child counts do not encode a plane tree")
    return tree_from_parents(_parents_from_counts(counts))


def _is_lukasiewicz(counts):
    s = np.cumsum(counts - 1)
    return bool(s[-1] == -1 and np.all(s[:-1] >= 0))


def cycle_lemma_rotation(counts) -> int:
    """Index r such that ``counts[r:] + counts[:r]`` is a valid preorder sequence.

    With steps ``c_i - 1`` summing to -1, the rotation starting right after
    the first global minimum of the partial sums is the unique valid one.
    """
    s = np.cumsum(np.asarray(counts, dtype=np.int64) - 1)
    return int((np.argmin(s) + 1) % len(s))


def _rotate_to_tree(counts):
    r = cycle_lemma_rotation(counts)
    return np.concatenate([counts[r:], counts[:r]])


def _parse_offspring(offspring):
    if isinstance(offspring, str):
        key = offspring.lower().replace("(", "").replace(")", "").replace("_", "").replace("/", "")
        if key in ("poisson1", "poisson"):
            return "poisson", None
        if key in ("geometric", "geometric12", "geometric0.5", "geom"):
            return "geometric", None
        raise InvalidOffspringLaw(f"unknown offspring law {offspring!r}")
    table = np.asarray(offspring, dtype=np.float64)
    if table.ndim != 1 or np.any(table < 0) or abs(table.sum() - 1) > 1e-9:
        raise InvalidOffspringLaw("offspring table must be a probability vector")
    if abs(np.dot(np.arange(len(table)), table) - 1.0) > 1e-9:
        raise InvalidOffspringLaw("offspring law must have mean 1")
    if table[0] <= 0:
        raise InvalidOffspringLaw("offspring law must put mass on 0")
    return "table", table / table.sum()


def offspring_variance(offspring) -> float:
    kind, table = _parse_offspring(offspring)
    if kind == "poisson":
        return 1.0
    if kind == "geometric":
        return 2.0
    k = np.arange(len(table))
    return float(np.dot(k * k, table) - 1.0)


def _feasible(support, n):
    """Can n be written as a sum of n+1 values from ``support`` (which holds 0)?"""
    pos = [int(k) for k in support if k > 0]
    if n == 0:
        return True
    if not pos:
        return False
    g = 0
    for k in pos:
        g = math.gcd(g, k)
    if n % g:
        return False
    inf = n + 2
    best = np.full(n + 1, inf, dtype=np.int64)
    best[0] = 0
    for s in range(1, n + 1):
        for k in pos:
            if k <= s and best[s - k] + 1 < best[s]:
                best[s] = best[s - k] + 1
    return best[n] <= n + 1


def sample_conditioned_gw(offspring, n: int, seed) -> PlaneTree:
    """Galton-Watson tree conditioned on having n edges (n+1 vertices).

    The child-count vector of n+1 i.i.d. offspring conditioned on summing to
    n is exchangeable, so the cycle-lemma rotation of it is an exact sample.
    For Poisson(1) the conditioned vector is multinomial, for Geometric(1/2)
    it is a uniform weak composition; other tables use rejection.
    """
    if n < 0:
        raise InvalidParameter("size must be nonnegative")
    kind, table = _parse_offspring(offspring)
    rng = generator(seed)
    m = n + 1
    if n == 0:
        return tree_from_child_counts([0])
    if kind == "poisson":
        counts = rng.multinomial(n, np.full(m, 1.0 / m))
    elif kind == "geometric":
        bars = np.sort(rng.choice(2 * n, size=n, replace=False))
        # n balls and n bars in 2n slots: counts are the gaps between bars
        ext = np.concatenate([[-1], bars, [2 * n]])
        counts = np.diff(ext) - 1
    else:
        support = np.flatnonzero(table > 0)
        if not _feasible(support, n):
            raise InfeasibleSize(f"no tree with {n} edges under this offspring law")
        counts = None
        tried = 0
        batch = max(1, min(4096, REJECTION_BUDGET // max(m, 1)))
        while counts is None:
            if tried >= REJECTION_BUDGET:
                raise SamplingBudgetExceeded("conditioned GW rejection budget exhausted")
            draw = rng.choice(len(table), size=(batch, m), p=table)
            ok = np.flatnonzero(draw.sum(axis=1) == n)
            tried += batch
            if len(ok):
                counts = draw[ok[0]]
    counts = np.asarray(counts, dtype=np.int64)
    return tree_from_child_counts(_rotate_to_tree(counts))


def _ecd_array(s):
    if isinstance(s, dict):
        k = max(s) + 1 if s else 1
        arr = np.zeros(k, dtype=np.int64)
        for i, c in s.items():
            arr[int(i)] = int(c)
        return arr
    return np.asarray(s, dtype=np.int64)


def is_tenable(s) -> bool:
    arr = _ecd_array(s)
    if np.any(arr < 0) or arr.sum() == 0:
        return False
    return bool(arr.sum() == 1 + np.dot(np.arange(len(arr)), arr) and arr[0] >= 1)


def uniform_plane_tree_with_ecd(s, seed) -> PlaneTree:
    """Uniform plane tree with ``s[i]`` vertices having i children."""
    arr = _ecd_array(s)
    if not is_tenable(arr):
        raise NotTenable(f"children distribution {arr.tolist()} is not tenable")
    counts = np.repeat(np.arange(len(arr)), arr)
    rng = generator(seed)
    rng.shuffle(counts)
    return tree_from_child_counts(_rotate_to_tree(counts))


def ecd_of(t: PlaneTree) -> np.ndarray:
    return np.bincount(t.n_children())


@dataclass(frozen=True)
class ContourPath:
    values: np.ndarray
    vertices: np.ndarray

    @property
    def n(self) -> int:
        return (len(self.values) - 1) // 2

    @property
    def normalized(self) -> np.ndarray:
        n = max(self.n, 1)
        return self.values / math.sqrt(n)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, len(self.values))

    def at(self, s: float) -> float:
        return float(np.interp(s, self.grid, self.normalized))


@nb.njit(cache=True)
def _contour(child_ptr, child_idx, root):
    n = len(child_ptr) - 1
    length = 2 * (n - 1) + 1
    vals = np.empty(length, dtype=np.int64)
    verts = np.empty(length, dtype=np.int64)
    stack_v = np.empty(n, dtype=np.int64)
    stack_k = np.empty(n, dtype=np.int64)
    sp = 0
    stack_v[0] = root
    stack_k[0] = child_ptr[root]
    sp = 1
    i = 0
    vals[0] = 0
    verts[0] = root
    while sp > 0:
        v = stack_v[sp - 1]
        k = stack_k[sp - 1]
        if k < child_ptr[v + 1]:
            stack_k[sp - 1] = k + 1
            c = child_idx[k]
            stack_v[sp] = c
            stack_k[sp] = child_ptr[c]
            sp += 1
            i += 1
            vals[i] = sp - 1
            verts[i] = c
        else:
            sp -= 1
            if sp > 0:
                i += 1
                vals[i] = sp - 1
                verts[i] = stack_v[sp - 1]
    return vals, verts


def contour_process(t: PlaneTree) -> ContourPath:
    vals, verts = _contour(t.child_ptr, t.child_idx, t.root)
    return ContourPath(vals, verts)


def contour_projection(t: PlaneTree, time_index: int) -> int:
    c = contour_process(t)
    if not 0 <= time_index < len(c.values):
        raise IndexOutOfRange(f"contour index {time_index} outside [0, {len(c.values) - 1}]")
    return int(c.vertices[time_index])


@dataclass(frozen=True)
class LukasiewiczPath:
    x_values: np.ndarray
    order: np.ndarray

    @property
    def area(self) -> int:
        return int(self.x_values.sum())


def depth_first_walk_and_area(t: PlaneTree) -> LukasiewiczPath:
    """X(i) = |O(i)| - 1 for the stack exploration (first child on top)."""
    c = t.child_counts_preorder()
    x = np.concatenate([[0], np.cumsum(c[:-1])]) - np.arange(len(c))
    return LukasiewiczPath(x.astype(np.int64), t.preorder.copy())


def permitted_edges(t: PlaneTree) -> list[tuple[int, int]]:
    """Non-tree edges {v_i, w}: v_i explored at step i, w open at that moment."""
    stack = [t.root]
    out = []
    while stack:
        v = stack.pop()
        out.extend((int(v), int(w)) for w in reversed(stack))
        stack.extend(t.children(v)[::-1].tolist())
    return out


def depth_first_tree(n, edges, start=0):
    """Depth-first tree of a graph on 0..n-1: pushes unseen neighbours in
    increasing order with the smallest on top. Returns the parent array."""
    adj = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    parent = [-1] * n
    seen = [False] * n
    seen[start] = True
    stack = [start]
    while stack:
        v = stack.pop()
        new = sorted(w for w in adj[v] if not seen[w])
        for w in new:
            seen[w] = True
            parent[w] = v
        stack.extend(reversed(new))
    return parent


@nb.njit(cache=True)
def _holder_exact(v, alpha):
    k = len(v)
    h = 1.0 / (k - 1)
    best = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            r = abs(v[j] - v[i]) / ((j - i) * h) ** alpha
            if r > best:
                best = r
    return best


def holder_norm(p: ContourPath, alpha: float, max_exact: int = 4096, n_pairs: int = 10 ** 6,
                seed=0) -> tuple[float, bool]:
    """Grid Holder seminorm of the normalized contour.

    Returns ``(value, exact)``; above ``max_exact`` edges the value is a lower
    bound from random grid pairs.
    """
    if not 0 < alpha < 0.5:
        raise InvalidParameter("alpha must lie in (0, 1/2)")
    v = p.normalized.astype(np.float64)
    if len(v) < 2:
        return 0.0, True
    if p.n <= max_exact:
        return float(_holder_exact(v, alpha)), True
    rng = generator(seed)
    i = rng.integers(0, len(v), n_pairs)
    j = rng.integers(0, len(v), n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    h = 1.0 / (len(v) - 1)
    r = np.abs(v[j] - v[i]) / (np.abs(j - i) * h) ** alpha
    return float(r.max()), False


def tree_distance_matrix(t: PlaneTree) -> np.ndarray:
    from scipy.sparse import csgraph
    g = t.to_graph()
    import scipy.sparse as sp
    a = sp.csr_matrix((g.weights, g.indices, g.indptr), shape=(g.n_vertices,) * 2)
    return csgraph.shortest_path(a, unweighted=True, directed=False)


def write_tree(t: PlaneTree, path) -> None:
    parents = " ".join(str(int(p)) for p in t.parent[1:])
    if t.root != 0:
        raise InvalidParameter("serialization expects the root at vertex 0")
    with open(path, "w") as fh:
        fh.write(f"{t.n_vertices}; {parents}\n")


def read_tree(path) -> PlaneTree:
    with open(path) as fh:
        text = fh.read().strip()
    if ";" not in text:
        raise ParseError("tree file must read 'n; p_1 ... p_{n-1}'", 1)
    head, tail = text.split(";", 1)
    try:
        n = int(head)
        parents = [int(x) for x in tail.split()]
    except ValueError:
        raise ParseError("malformed tree file", 1) from None
    if len(parents) != n - 1:
        raise ParseError(f"expected {n - 1} parents, found {len(parents)}", 1)
    return tree_from_parents([-1] + parents)
