"""Grid-discretized excursions, the real trees they code, Poisson gluing and
the reflected Brownian motion with parabolic drift."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numba as nb
import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import BlanketLabError, HorizonTooShort, InvalidExcursion, InvalidParameter, ParseError
from .graph_core import WeightedGraph, graph_from_arrays
from .rng import derive_seed, generator


class DegenerateWeights(BlanketLabError):
    pass


class ResolutionTooCoarse(InvalidParameter):
    pass


class UnresolvableIdentification(BlanketLabError):
    pass


@dataclass(frozen=True, eq=False)
class Excursion:
    """Nonnegative function on N+1 equally spaced points of [0, zeta].

    The stored ``base`` grid is scaled lazily: ``values = base * sqrt(scale)``
    and ``zeta = base_zeta * scale`` with an exact rational ``scale``, so
    Theta-scalings compose exactly.
    """

    base: np.ndarray
    base_zeta: float
    scale: Fraction = Fraction(1)
    strict: bool = True

    def __post_init__(self):
        b = self.base
        if b.ndim != 1 or len(b) < 3:
            raise InvalidExcursion("an excursion needs at least 3 grid points")
        if b[0] != 0 or b[-1] != 0:
            raise InvalidExcursion("excursion must vanish at both endpoints")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise InvalidExcursion("excursion values must be finite and nonnegative")
        if self.strict and np.any(b[1:-1] <= 0):
            raise InvalidExcursion("excursion has an interior zero")
        if self.base_zeta <= 0:
            raise InvalidExcursion("length must be positive")

    @property
    def N(self) -> int:
        return len(self.base) - 1

    @property
    def zeta(self) -> float:
        return float(Fraction(self.base_zeta) * self.scale)

    @property
    def values(self) -> np.ndarray:
        if self.scale == 1:
            return self.base
        return self.base * math.sqrt(self.scale)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.zeta, self.N + 1)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, dx=self.zeta / self.N))

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)

    @classmethod
    def from_values(cls, values, zeta=1.0, strict=True):
        return cls(np.maximum(np.asarray(values, dtype=np.float64), 0.0), float(zeta), Fraction(1), strict)

    @classmethod
    def from_contour(cls, contour_values, zeta=1.0):
        """Coding function from a tree contour; root returns are allowed."""
        return cls(np.asarray(contour_values, dtype=np.float64), float(zeta), Fraction(1), False)


def excursion_batch(count, N, seed) -> np.ndarray:
    """``count`` normalized excursions of length 1 on N+1 points, one per row."""
    rng = generator(seed)
    inc = rng.standard_normal((count, N)) / math.sqrt(N)
    w = np.zeros((count, N + 1))
    np.cumsum(inc, axis=1, out=w[:, 1:])
    w -= np.outer(w[:, -1], np.linspace(0.0, 1.0, N + 1))
    w[:, -1] = 0.0
    k = np.argmin(w[:, :-1], axis=1)
    idx = (np.arange(N + 1)[None, :] + k[:, None]) % N
    out = np.take_along_axis(w, idx, axis=1) - w[np.arange(count), k][:, None]
    out[:, 0] = 0.0
    out[:, -1] = 0.0
    return out


def sample_excursion(zeta: float, N: int, seed) -> Excursion:
    """Brownian excursion of length zeta via the Vervaat transform of a bridge."""
    if N < 2:
        raise InvalidParameter("N must be at least 2")
    if zeta <= 0:
        raise InvalidParameter("zeta must be positive")
    for attempt in range(100):
        vals = excursion_batch(1, N, derive_seed(seed, "excursion", attempt) if attempt else seed)[0]
        if np.all(vals[1:-1] > 0):
            break
    else:  # pragma: no cover - ties have probability zero
        raise InvalidExcursion("could not draw an excursion without interior zeros")
    return theta_scale(Excursion(vals, 1.0), zeta)


def theta_scale(e: Excursion, a: float) -> Excursion:
    """Theta_a: length times a, heights times sqrt(a)."""
    if a <= 0:
        raise InvalidParameter("a must be positive")
    return Excursion(e.base, e.base_zeta, e.scale * Fraction(a), e.strict)


@dataclass(frozen=True)
class TiltedExcursion:
    excursion: Excursion
    ess: float


def sample_tilted_excursion(zeta, N, seed, pool_size=1000) -> TiltedExcursion:
    """Excursion reweighted by exp(integral of e), by importance resampling."""
    pool = excursion_batch(int(pool_size), N, seed) * math.sqrt(zeta)
    logw = np.trapezoid(pool, dx=zeta / N, axis=1)
    w = np.exp(logw - logw.max())
    ess = float(w.sum() ** 2 / np.sum(w * w))
    if ess < 10:
        raise DegenerateWeights(f"effective sample size {ess:.2f} below 10")
    pick = int(generator(derive_seed(seed, "resample")).choice(len(w), p=w / w.sum()))
    return TiltedExcursion(Excursion(pool[pick] / math.sqrt(zeta), 1.0, Fraction(zeta)), ess)


# ----------------------------------------------------------------- coded trees

@nb.njit(cache=True)
def _quotient(f):
    """Representative (first equivalent sample) and parent sample of each sample.

    Samples i < j are equivalent when f[i] == f[j] == min f[i..j]. The parent
    is the higher of the nearest strictly smaller samples on either side: the
    minimum of f between a sample and either of them is attained there, so it
    is the closest point of the root path that the grid resolves.
    """
    k = len(f)
    rep = np.empty(k, dtype=np.int64)
    left = np.full(k, -1, dtype=np.int64)
    right = np.full(k, -1, dtype=np.int64)
    stack = np.empty(k, dtype=np.int64)
    sp_ = 0
    for i in range(k):
        while sp_ > 0 and f[stack[sp_ - 1]] > f[i]:
            sp_ -= 1
        if sp_ > 0 and f[stack[sp_ - 1]] == f[i]:
            rep[i] = rep[stack[sp_ - 1]]
            left[i] = left[stack[sp_ - 1]]
            stack[sp_ - 1] = i
        else:
            rep[i] = i
            left[i] = stack[sp_ - 1] if sp_ > 0 else -1
            stack[sp_] = i
            sp_ += 1
    sp_ = 0
    for i in range(k - 1, -1, -1):
        while sp_ > 0 and f[stack[sp_ - 1]] >= f[i]:
            sp_ -= 1
        right[i] = stack[sp_ - 1] if sp_ > 0 else -1
        stack[sp_] = i
        sp_ += 1
    par = np.full(k, -1, dtype=np.int64)
    for i in range(k):
        a = left[i]
        b = right[rep[i]]
        if a < 0:
            par[i] = b
        elif b < 0 or f[a] >= f[b]:
            par[i] = a
        else:
            par[i] = b
    return rep, par


@nb.njit(cache=True)
def _coded_metric(f, first):
    """d(s,t) = f(s) + f(t) - 2 min f on [s,t] between the given sample indices."""
    r = len(first)
    d = np.zeros((r, r))
    for a in range(r):
        i = first[a]
        m = f[i]
        # sweep forward, recording the running min at each later representative
        b = a + 1
        for j in range(i, len(f)):
            if f[j] < m:
                m = f[j]
            while b < r and first[b] == j:
                d[a, b] = f[i] + f[j] - 2.0 * m
                d[b, a] = d[a, b]
                b += 1
            if b >= r:
                break
    return d


@dataclass(frozen=True, eq=False)
class DiscretizedContinuumTree:
    source: Excursion
    sample_index: np.ndarray     # grid index of each sampled time
    heights: np.ndarray          # coding value at each sampled time
    rep_of_sample: np.ndarray    # representative id of each sampled time
    first_sample: np.ndarray     # first sampled time of each representative
    parent: np.ndarray           # parent representative (-1 at the root)
    edge_length: np.ndarray      # distance to the parent (0 at the root)
    mass: np.ndarray
    _metric: dict = field(default_factory=dict, repr=False)

    @property
    def n_reps(self) -> int:
        return len(self.first_sample)

    @property
    def rep_heights(self) -> np.ndarray:
        return self.heights[self.first_sample]

    @property
    def root(self) -> int:
        return int(self.rep_of_sample[0])

    def metric(self) -> np.ndarray:
        if "d" not in self._metric:
            self._metric["d"] = _coded_metric(self.heights, self.first_sample)
        return self._metric["d"]

    def distance(self, i, j) -> float:
        a, b = sorted((int(self.first_sample[i]), int(self.first_sample[j])))
        f = self.heights
        return float(f[a] + f[b] - 2.0 * f[a:b + 1].min())

    def edges(self):
        v = np.flatnonzero(self.parent >= 0)
        return self.parent[v], v, self.edge_length[v]

    def to_graph(self) -> WeightedGraph:
        u, v, length = self.edges()
        return graph_from_arrays(self.n_reps, u, v, 1.0 / length)

    def walk_data(self):
        """Graph with conductances 1/length and mean holding times mass/conductance."""
        g = self.to_graph()
        return g, self.mass / g.mu

    def ancestors(self, r) -> list[int]:
        out = []
        while r >= 0:
            out.append(int(r))
            r = int(self.parent[r])
        return out[::-1]


def excursion_to_tree(e: Excursion, n_leaves: Optional[int] = None) -> DiscretizedContinuumTree:
    """Tree coded by ``e`` sampled at n_leaves+1 equally spaced grid times.

    Each sampled time carries the Lebesgue mass of its half-cell neighbourhood
    (zeta/n_leaves inside, half that at both ends); masses add on merging.
    """
    N = e.N
    n_leaves = N if n_leaves is None else int(n_leaves)
    if n_leaves < 1:
        raise ResolutionTooCoarse("need at least one leaf interval")
    if n_leaves > N:
        raise ResolutionTooCoarse(f"{n_leaves} leaves exceed the grid resolution {N}")
    idx = np.rint(np.linspace(0, N, n_leaves + 1)).astype(np.int64)
    f = e.values[idx].astype(np.float64)
    rep, par = _quotient(f)
    first = np.unique(rep)
    rep_id = np.full(len(f), -1, dtype=np.int64)
    rep_id[first] = np.arange(len(first))
    rep_of_sample = rep_id[rep]
    parent = np.array([rep_of_sample[par[i]] if par[i] >= 0 else -1 for i in first], dtype=np.int64)
    lengths = np.where(parent >= 0, f[first] - f[first[np.maximum(parent, 0)]], 0.0)
    w = np.full(len(f), e.zeta / n_leaves)
    w[0] *= 0.5
    w[-1] *= 0.5
    mass = np.bincount(rep_of_sample, weights=w, minlength=len(first))
    return DiscretizedContinuumTree(e, idx, f, rep_of_sample, first, parent, lengths, mass)


def four_point_violations(d: np.ndarray, n_quads: int, seed, tol=1e-9) -> int:
    """Random quadruples failing d(x,y)+d(z,w) <= max of the other two sums."""
    rng = generator(seed)
    q = rng.integers(0, d.shape[0], size=(n_quads, 4))
    x, y, z, w = q.T
    s1 = d[x, y] + d[z, w]
    s2 = d[x, z] + d[y, w]
    s3 = d[x, w] + d[y, z]
    s = np.sort(np.stack([s1, s2, s3]), axis=0)
    return int(np.sum(s[2] - s[1] > tol))


# ---------------------------------------------------------- points and gluing

@dataclass(frozen=True)
class PointSet:
    points: np.ndarray   # shape (k, 2): columns t, x
    rate: float


def sample_pointset(e: Excursion, c3: float, seed) -> PointSet:
    """Poisson points under the graph of e with mean c3 * integral of e."""
    if c3 <= 0:
        raise InvalidParameter("c3 must be positive")
    rng = generator(seed)
    k = int(rng.poisson(c3 * e.integral()))
    return PointSet(_points_under(e, k, rng), float(c3))


def _points_under(e, k, rng):
    vals = e.values
    h = e.zeta / e.N
    left, right = vals[:-1], vals[1:]
    cell = 0.5 * (left + right) * h
    cells = rng.choice(len(cell), size=k, p=cell / cell.sum())
    a, b = left[cells], right[cells]
    u = rng.random(k)
    # inverse CDF of the linear density a + (b-a)s on [0, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(b - a) > 1e-14 * np.maximum(a + b, 1e-300),
                     (-a + np.sqrt(a * a + u * (b * b - a * a))) / (b - a), u)
    t = (cells + s) * h
    x = rng.random(k) * e(t)
    return np.column_stack([t, x])


def point_to_reps(tree: DiscretizedContinuumTree, t, x, snap=1e-9):
    """(u, v): the representative at time t and its root-path ancestor at height x."""
    zeta = tree.source.zeta
    n_leaves = len(tree.sample_index) - 1
    j = int(np.clip(np.rint(t / zeta * n_leaves), 0, n_leaves))
    u = int(tree.rep_of_sample[j])
    path = tree.ancestors(u)
    hs = tree.rep_heights[path]
    # t is quantized to the sample grid, so x may overshoot the representative
    x = min(float(x), float(hs[-1]))
    if x < -snap:
        raise UnresolvableIdentification(f"negative height {x}")
    pos = int(np.searchsorted(hs, x - snap))
    cand = [c for c in (pos - 1, pos) if 0 <= c < len(hs)]
    best = min(cand, key=lambda c: (abs(hs[c] - x), c))
    return u, int(path[best])


@dataclass(frozen=True, eq=False)
class GluedSpace:
    base: DiscretizedContinuumTree
    identifications: list
    metric: np.ndarray
    mass: np.ndarray      # pushforward of the tree measure on glued classes, per rep
    classes: np.ndarray   # glued class id of each representative


def glue_continuum(tree: DiscretizedContinuumTree, ps) -> GluedSpace:
    """Identify each (u, v) pair; distances are shortest paths in the tree
    with the identified representatives merged (zero-length edges)."""
    if isinstance(ps, PointSet):
        pairs = [point_to_reps(tree, t, x) for t, x in ps.points]
    else:
        pairs = [(int(a), int(b)) for a, b in ps]
    r = tree.n_reps
    cls_parent = list(range(r))

    def find(a):
        while cls_parent[a] != a:
            cls_parent[a] = cls_parent[cls_parent[a]]
            a = cls_parent[a]
        return a

    for a, b in pairs:
        if not (0 <= a < r and 0 <= b < r):
            raise UnresolvableIdentification(f"pair ({a}, {b}) outside the tree")
        ra, rb = find(a), find(b)
        if ra != rb:
            cls_parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(a) for a in range(r)])
    _, cls = np.unique(roots, return_inverse=True)
    u, v, length = tree.edges()
    cu, cv = cls[u], cls[v]
    keep = cu != cv
    nc = int(cls.max()) + 1
    if nc == 1:
        dc = np.zeros((1, 1))
    else:
        # parallel class edges collapse to their shortest member
        best = {}
        for x, y, ln in zip(cu[keep], cv[keep], length[keep]):
            key = (min(x, y), max(x, y))
            best[key] = min(ln, best.get(key, np.inf))
        ij = np.array(list(best.keys()), dtype=np.int64).reshape(-1, 2)
        wts = np.array(list(best.values()))
        m = sp.csr_matrix((np.concatenate([wts, wts]),
                           (np.concatenate([ij[:, 0], ij[:, 1]]), np.concatenate([ij[:, 1], ij[:, 0]]))),
                          shape=(nc, nc))
        dc = csgraph.shortest_path(m, directed=False)
    d = dc[np.ix_(cls, cls)]
    return GluedSpace(tree, pairs, d, tree.mass.copy(), cls)


# ------------------------------------------------ reflected parabolic motion

@dataclass(frozen=True)
class ParabolicExcursions:
    lengths: np.ndarray
    marks: np.ndarray
    horizon: float


CHUNK = 1 << 16


def _drifted_path(lam, c, horizon, dt, seed):
    c1, c2, _ = c
    n = int(math.ceil(horizon / dt))
    n_chunks = (n + CHUNK - 1) // CHUNK
    inc = np.concatenate([generator(derive_seed(seed, "bm", k)).standard_normal(CHUNK)
                          for k in range(n_chunks)])[:n] * math.sqrt(dt)
    t = np.arange(1, n + 1) * dt
    w = np.cumsum(inc)
    b = math.sqrt(c2) / c1 * w + lam * t - c2 * t * t / (2.0 * c1 ** 3)
    b = np.concatenate([[0.0], b])
    return b, dt


def _excursions_of(b, dt):
    refl = b - np.minimum.accumulate(b)
    pos = refl > 0
    d = np.diff(pos.astype(np.int8))
    starts = np.flatnonzero(d == 1) + 1
    ends = np.flatnonzero(d == -1) + 1
    if pos[0]:
        starts = np.concatenate([[0], starts])
    if pos[-1]:
        ends = np.concatenate([ends, [len(b)]])
    lengths = (ends - starts + 1) * dt
    csum = np.concatenate([[0.0], np.cumsum(refl)])
    areas = (csum[ends] - csum[starts]) * dt
    return starts, lengths, areas, pos[-1]


def simulate_reflected_parabolic(lam, c=(1.0, 1.0, 1.0), horizon=10.0, dt=None, seed=0,
                                 max_doublings=6) -> ParabolicExcursions:
    """Excursions above the running minimum of
    sqrt(c2)/c1 W_t + lam t - c2 t^2 / (2 c1^3), with Poisson(c3 * area) marks.

    The horizon doubles until no macroscopic excursion starts in its last 10%.
    Increments come in seeded chunks, so a longer horizon extends the same path.
    """
    c1, c2, c3 = (float(x) for x in c)
    if min(c1, c2, c3) <= 0:
        raise InvalidParameter("c1, c2, c3 must be positive")
    dt = 1e-3 * horizon if dt is None else float(dt)
    if dt > 1e-3 * horizon:
        raise InvalidParameter("dt must be at most 1e-3 * horizon")
    h = float(horizon)
    for _ in range(max_doublings + 1):
        b, _ = _drifted_path(lam, (c1, c2, c3), h, dt, seed)
        starts, lengths, areas, open_end = _excursions_of(b, dt)
        if len(lengths) == 0:
            break
        thresh = max(50 * dt, 0.01 * lengths.max())
        late = starts * dt > 0.9 * h
        if not open_end and not np.any(late & (lengths >= thresh)):
            break
        h *= 2
    else:
        raise HorizonTooShort(f"excursions still active at horizon {h / 2}")
    order = np.argsort(-lengths, kind="stable")
    marks = generator(derive_seed(seed, "marks")).poisson(c3 * areas[order])
    return ParabolicExcursions(lengths[order], marks, h)


# ----------------------------------------------------------------- serialization

def write_excursion(e: Excursion, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"zeta,N\n{e.zeta!r},{e.N}\n")
        fh.write("\n".join(repr(float(v)) for v in e.values) + "\n")


def read_excursion(path) -> Excursion:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 2 or lines[0].replace(" ", "") != "zeta,N":
        raise ParseError("excursion file must start with a 'zeta,N' header", 1)
    try:
        zeta_s, n_s = lines[1].split(",")
        zeta, n = float(zeta_s), int(n_s)
        vals = np.array([float(v) for v in lines[2:]])
    except ValueError:
        raise ParseError("malformed excursion file", 2) from None
    if len(vals) != n + 1:
        raise ParseError(f"expected {n + 1} grid values, found {len(vals)}", 3)
    return Excursion.from_values(vals, zeta, strict=False)
