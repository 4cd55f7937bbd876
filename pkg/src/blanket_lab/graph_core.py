"""Finite weighted graphs, stationary measures, Dirichlet energy and
effective resistance."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import cg

from .errors import (Disconnected, InvalidGraph, InvalidParameter, ParseError,
                     SizeLimitExceeded, SolverNotConverged)

DENSE_LIMIT = 5000


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected weighted (multi)graph with dense integer vertex ids.

    The adjacency is stored in CSR form. A self-loop contributes two
    half-edge entries at its vertex, so ``mu[x]`` counts its weight twice.
    """

    n_vertices: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    multigraph: bool = False
    indptr: np.ndarray = field(repr=False, default=None)
    indices: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)
    mu: np.ndarray = field(repr=False, default=None)

    @property
    def n_edges(self) -> int:
        return len(self.u)

    @property
    def total_mass(self) -> float:
        return float(self.mu.sum())

    def neighbors(self, x):
        lo, hi = self.indptr[x], self.indptr[x + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def edge_list(self):
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.u, self.v, self.w)]

    def is_tree(self) -> bool:
        return (not self.multigraph or not np.any(self.u == self.v)) and \
            self.n_edges == self.n_vertices - 1 and is_connected(self)

    def degree(self):
        return np.diff(self.indptr)


def _csr(n, u, v, w):
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    vals = np.concatenate([w, w])
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    mu = np.zeros(n)
    np.add.at(mu, rows, vals)
    return indptr, cols.astype(np.int64), vals.astype(np.float64), mu


def build_graph(edge_list: Iterable, n_vertices: Optional[int] = None,
                multigraph: bool = False, require_connected: bool = True) -> WeightedGraph:
    """Build a graph from ``(u, v)`` or ``(u, v, w)`` tuples.

    Parameters
    ----------
    edge_list : iterable of tuples
        Edges; a missing weight defaults to 1.
    n_vertices : int, optional
        Declared vertex count; inferred from the largest endpoint otherwise.
    multigraph : bool
        Allow self-loops (parallel edges are always accepted).
    require_connected : bool
        Raise ``Disconnected`` for disconnected input.
    """
    edges = [tuple(e) for e in edge_list]
    if not edges and (n_vertices is None or require_connected):
        raise InvalidGraph("edge list is empty")
    arr = np.array([(e[0], e[1], e[2] if len(e) > 2 else 1.0) for e in edges],
                   dtype=np.float64).reshape(-1, 3)
    u = arr[:, 0].astype(np.int64)
    v = arr[:, 1].astype(np.int64)
    w = arr[:, 2]
    if np.any(arr[:, :2] != np.floor(arr[:, :2])):
        raise InvalidGraph("vertex ids must be integers")
    n = int(n_vertices) if n_vertices is not None else int(max(u.max(), v.max()) + 1)
    return graph_from_arrays(n, u, v, w, multigraph=multigraph,
                             require_connected=require_connected)


def graph_from_arrays(n, u, v, w=None, multigraph=False, require_connected=True):
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    w = np.ones(len(u)) if w is None else np.asarray(w, dtype=np.float64)
    if n < 2:
        raise InvalidGraph("a graph needs at least two vertices")
    if len(u) and (u.min() < 0 or v.min() < 0 or u.max() >= n or v.max() >= n):
        raise InvalidGraph("edge endpoint outside the declared vertex range")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InvalidGraph("edge weights must be strictly positive")
    if not multigraph and np.any(u == v):
        raise InvalidGraph("self-loop in a graph not flagged as multigraph")
    indptr, indices, weights, mu = _csr(n, u, v, w)
    g = WeightedGraph(n, u, v, w, multigraph, indptr, indices, weights, mu)
    if require_connected and not is_connected(g):
        raise Disconnected("graph is disconnected")
    return g


def _sparse_adjacency(g):
    n = g.n_vertices
    return sp.csr_matrix((g.weights, g.indices, g.indptr), shape=(n, n))


def is_connected(g) -> bool:
    n_comp = csgraph.connected_components(_sparse_adjacency(g), directed=False)[0]
    return n_comp == 1


@dataclass(frozen=True)
class VertexMeasure:
    mu_x: np.ndarray
    total_mass: float
    pi: np.ndarray


def stationary_measure(g: WeightedGraph) -> VertexMeasure:
    mu = g.mu.copy()
    m = float(mu.sum())
    return VertexMeasure(mu, m, mu / m)


def dirichlet_energy(g: WeightedGraph, f, h=None) -> float:
    """Symmetric Dirichlet form, half the sum over ordered adjacent pairs."""
    f = np.asarray(f, dtype=np.float64)
    h = f if h is None else np.asarray(h, dtype=np.float64)
    if f.shape != (g.n_vertices,) or h.shape != (g.n_vertices,):
        raise InvalidParameter("vertex function has the wrong dimension")
    # each unordered edge appears twice among ordered pairs, halving cancels that
    return float(np.sum((f[g.u] - f[g.v]) * (h[g.u] - h[g.v]) * g.w))


def laplacian(g: WeightedGraph):
    keep = g.u != g.v
    u, v, w = g.u[keep], g.v[keep], g.w[keep]
    n = g.n_vertices
    a = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
                      shape=(n, n)).tocsr()
    d = np.asarray(a.sum(axis=1)).ravel()
    return (sp.diags(d) - a).tocsr()


def _tree_distances(g, source, lengths):
    """Weighted path distances from ``source`` on a tree."""
    n = g.n_vertices
    dist = np.full(n, -1.0)
    dist[source] = 0.0
    stack = [source]
    while stack:
        x = stack.pop()
        lo, hi = g.indptr[x], g.indptr[x + 1]
        for k in range(lo, hi):
            y = g.indices[k]
            if dist[y] < 0:
                dist[y] = dist[x] + lengths[k]
                stack.append(y)
    return dist


def potential(g: WeightedGraph, a: int, b: int, tol: float = 1e-10):
    """Voltage with unit current injected at ``a``, extracted at ``b``; ``phi[b]=0``."""
    n = g.n_vertices
    lap = laplacian(g)
    keep = np.arange(n) != b
    lg = lap[keep][:, keep].tocsr()
    rhs = np.zeros(n - 1)
    ia = a if a < b else a - 1
    rhs[ia] = 1.0
    diag = lg.diagonal()
    pre = sp.diags(1.0 / diag)
    iters = [0]

    def count(_):
        iters[0] += 1

    x, info = cg(lg, rhs, rtol=tol, atol=0.0, maxiter=10 * n, M=pre, callback=count)
    res = float(np.linalg.norm(lg @ x - rhs))
    if info != 0 or res > max(tol, 1e-9) * max(1.0, np.linalg.norm(rhs)) * 10:
        raise SolverNotConverged(iters[0], res)
    phi = np.zeros(n)
    phi[keep] = x
    return phi


def effective_resistance(g: WeightedGraph, a: int, b: int) -> float:
    """Effective resistance between two vertices.

    Trees take a fast path (sum of edge resistances along the unique path);
    otherwise the grounded Laplacian system is solved by Jacobi-preconditioned
    conjugate gradients.
    """
    _check_vertex(g, a)
    _check_vertex(g, b)
    if a == b:
        raise InvalidParameter("effective resistance needs two distinct vertices")
    if g.is_tree():
        return float(_tree_distances(g, a, 1.0 / g.weights)[b])
    return float(potential(g, a, b)[a])


def _check_vertex(g, x):
    if not (0 <= int(x) < g.n_vertices):
        raise InvalidParameter(f"vertex {x} out of range")


@dataclass(frozen=True, eq=False)
class MetricMatrix:
    """Finite metric, either as a dense matrix or a lazy pair evaluator."""

    kind: str
    values: Optional[np.ndarray]
    evaluator: Optional[Callable[[int, int], float]] = None

    @property
    def size(self):
        return None if self.values is None else self.values.shape[0]

    def __call__(self, i, j):
        if self.values is not None:
            return float(self.values[i, j])
        return self.evaluator(i, j)


def graph_metric(g: WeightedGraph, kind: str = "resistance", lazy: bool = False) -> MetricMatrix:
    """Shortest-path (hop count) or resistance metric on the vertices."""
    if kind not in ("shortest-path", "resistance"):
        raise InvalidParameter(f"unknown metric kind {kind!r}")
    n = g.n_vertices
    adj = _sparse_adjacency(g)
    if kind == "shortest-path":
        hops = sp.csr_matrix((np.ones_like(g.weights), g.indices, g.indptr), shape=(n, n))
        if n > DENSE_LIMIT and lazy:
            return MetricMatrix(kind, None, lambda i, j: float(
                csgraph.shortest_path(hops, unweighted=True, indices=[i])[0, j]))
        return MetricMatrix(kind, csgraph.shortest_path(hops, unweighted=True, directed=False))
    if g.is_tree():
        res = sp.csr_matrix((1.0 / g.weights, g.indices, g.indptr), shape=(n, n))
        if n > DENSE_LIMIT:
            if not lazy:
                raise SizeLimitExceeded("resistance matrix above 5000 vertices; use lazy=True")
            return MetricMatrix(kind, None, lambda i, j: float(_tree_distances(g, i, 1.0 / g.weights)[j]))
        return MetricMatrix(kind, csgraph.shortest_path(res, directed=False))
    if n > DENSE_LIMIT:
        if not lazy:
            raise SizeLimitExceeded("resistance matrix above 5000 vertices; use lazy=True")
        return MetricMatrix(kind, None, lambda i, j: 0.0 if i == j else effective_resistance(g, i, j))
    del adj
    lp = np.linalg.pinv(laplacian(g).toarray(), hermitian=True)
    dg = np.diag(lp)
    r = dg[:, None] + dg[None, :] - 2 * lp
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 0.0)
    np.maximum(r, 0.0, out=r)
    return MetricMatrix(kind, r)


def diameter(g: WeightedGraph, kind: str = "shortest-path") -> float:
    if kind == "shortest-path" and g.is_tree():
        d0 = _tree_distances(g, 0, np.ones_like(g.weights))
        far = int(np.argmax(d0))
        return float(_tree_distances(g, far, np.ones_like(g.weights)).max())
    if kind == "resistance" and g.is_tree():
        lengths = 1.0 / g.weights
        far = int(np.argmax(_tree_distances(g, 0, lengths)))
        return float(_tree_distances(g, far, lengths).max())
    return float(graph_metric(g, kind).values.max())


def write_graph(g: WeightedGraph, path) -> None:
    lines = [f"{g.n_vertices} {g.n_edges}"]
    lines += [f"{a} {b} {c!r}" for a, b, c in g.edge_list()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_graph(path, multigraph=None, require_connected=True) -> WeightedGraph:
    with open(path) as fh:
        raw = [ln.split("#")[0].strip() for ln in fh]
    rows = [(i + 1, ln) for i, ln in enumerate(raw) if ln]
    if not rows:
        raise ParseError("empty graph file")
    lineno, header = rows[0]
    try:
        n, m = (int(t) for t in header.split())
    except ValueError:
        raise ParseError("header must be 'n m'", lineno) from None
    if len(rows) - 1 != m:
        raise ParseError(f"header declares {m} edges, found {len(rows) - 1}", lineno)
    edges = []
    for lineno, ln in rows[1:]:
        parts = ln.split()
        if len(parts) not in (2, 3):
            raise ParseError("edge lines must be 'u v w'", lineno)
        try:
            edges.append((int(parts[0]), int(parts[1]), float(parts[2]) if len(parts) == 3 else 1.0))
        except ValueError:
            raise ParseError("malformed edge", lineno) from None
    if multigraph is None:
        multigraph = any(a == b for a, b, _ in edges)
    return graph_from_arrays(n, [e[0] for e in edges], [e[1] for e in edges],
                             [e[2] for e in edges], multigraph=multigraph,
                             require_connected=require_connected)


def induced_subgraph(g: WeightedGraph, vertices) -> tuple[WeightedGraph, np.ndarray]:
    """Subgraph on ``vertices`` relabelled 0..k-1; returns it with the old ids."""
    vertices = np.asarray(sorted(set(int(x) for x in vertices)), dtype=np.int64)
    relabel = np.full(g.n_vertices, -1, dtype=np.int64)
    relabel[vertices] = np.arange(len(vertices))
    keep = (relabel[g.u] >= 0) & (relabel[g.v] >= 0)
    sub = graph_from_arrays(len(vertices), relabel[g.u[keep]], relabel[g.v[keep]], g.w[keep],
                            multigraph=g.multigraph)
    return sub, vertices
