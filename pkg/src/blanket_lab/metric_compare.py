"""Prokhorov and Skorokhod distances, correspondence distortion and an upper
bound for the distance between metric spaces decorated with a measure, a
path and local times."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numba as nb
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_flow

from .errors import (InvalidCorrespondence, InvalidParameter, InvalidQuadruple, ParseError,
                     SizeLimitExceeded, TooManyBreakpoints)

EXACT_ATOMS = 60
MAX_ATOMS = 1000
MAX_BREAKPOINTS = 1000
LOCAL_TIME_GRID = 1000


class MissingParameterization(InvalidParameter):
    pass


# ------------------------------------------------------------------ Prokhorov

@dataclass(frozen=True)
class ProkhorovResult:
    value: float
    exact: bool

    def __float__(self):
        return self.value


def _max_flow(mu, nu, adj_mask, scale):
    """Max flow source -> A -> B -> sink with arcs where ``adj_mask`` holds."""
    na, nb_ = len(mu), len(nu)
    cap_mu = np.rint(mu * scale).astype(np.int64)
    cap_nu = np.rint(nu * scale).astype(np.int64)
    big = int(cap_mu.sum() + cap_nu.sum() + 1)
    src, snk = na + nb_, na + nb_ + 1
    ia, ib = np.nonzero(adj_mask)
    rows = np.concatenate([np.full(na, src), ia, na + np.arange(nb_)])
    cols = np.concatenate([np.arange(na), na + ib, np.full(nb_, snk)])
    caps = np.concatenate([cap_mu, np.full(len(ia), big), cap_nu]).astype(np.int32)
    g = sp.csr_matrix((caps, (rows, cols)), shape=(na + nb_ + 2,) * 2)
    return maximum_flow(g, src, snk).flow_value / scale


def _prokhorov_exact(mu, nu, d):
    """min over distance levels d_k of max(d_k, D_k), D_k the worst set deficiency
    for enlargements {d <= d_k}; deficiency = max total mass - max flow."""
    tot = max(mu.sum(), nu.sum())
    scale = float(2 ** 30) / max(mu.sum() + nu.sum(), 1e-300)
    levels = np.unique(np.concatenate([[0.0], d.ravel()]))

    # D_k is nonincreasing and d_k increasing: bisect for the crossing
    lo, hi = 0, len(levels) - 1
    cache = {}

    def deficit(k):
        if k not in cache:
            flow = _max_flow(mu, nu, d <= levels[k], scale)
            cache[k] = tot - flow
        return cache[k]

    while lo < hi:
        mid = (lo + hi) // 2
        if deficit(mid) <= levels[mid]:
            hi = mid
        else:
            lo = mid + 1
    cands = [max(levels[lo], deficit(lo))]
    if lo > 0:
        cands.append(max(levels[lo - 1], deficit(lo - 1)))
    return float(min(min(cands), tot))


@nb.njit(cache=True)
def _greedy_coupling(order, dist, ia, ib, mu, nu):
    ra = mu.copy()
    rb = nu.copy()
    mass = np.zeros(len(order))
    for k in range(len(order)):
        e = order[k]
        a = ia[e]
        b = ib[e]
        m = min(ra[a], rb[b])
        if m > 0:
            mass[k] = m
            ra[a] -= m
            rb[b] -= m
    return mass, ra.sum(), rb.sum()


def prokhorov_coupling_bound(mu, nu, cross) -> float:
    """Upper bound from a greedy nearest-pairs coupling between mu (rows of
    ``cross``) and nu (columns): inf over e of max(e, mass moved farther than e
    plus the unmatched excess)."""
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    ia, ib = np.nonzero((mu[:, None] > 0) & (nu[None, :] > 0))
    dist = cross[ia, ib]
    order = np.argsort(dist, kind="stable")
    mass, left_a, left_b = _greedy_coupling(order, dist, ia, ib, mu, nu)
    ds = dist[order]
    excess = max(left_a, left_b)
    # mass strictly farther than ds[k]
    tail = np.concatenate([np.cumsum(mass[::-1])[::-1][1:], [0.0]])
    # collapse ties: for equal distances take the last index's tail
    last = np.concatenate([ds[1:] != ds[:-1], [True]])
    vals = np.maximum(ds[last], tail[last] + excess)
    best = float(vals.min()) if len(vals) else np.inf
    return min(best, max(mu.sum(), nu.sum()))


def prokhorov_distance(mu, nu, metric, mode: str = "auto") -> ProkhorovResult:
    """Prokhorov distance between two atomic measures on one finite space.

    ``mode='auto'`` is exact up to 60 atoms and a certified upper bound above;
    ``'exact'`` forces max-flow (up to 1000 atoms); ``'bound'`` forces the bound.
    """
    d = np.asarray(getattr(metric, "values", metric), dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if mu.shape != nu.shape or d.shape != (len(mu), len(mu)):
        raise InvalidParameter("measures and metric dimensions disagree")
    if np.any(mu < 0) or np.any(nu < 0):
        raise InvalidParameter("measures must be nonnegative")
    sa, sb = np.flatnonzero(mu > 0), np.flatnonzero(nu > 0)
    atoms = len(np.union1d(sa, sb))
    if mode == "exact" or (mode == "auto" and atoms <= EXACT_ATOMS):
        if atoms > MAX_ATOMS:
            raise SizeLimitExceeded(f"{atoms} atoms exceed the exact limit {MAX_ATOMS}")
        if len(sa) == 0 or len(sb) == 0:
            return ProkhorovResult(float(max(mu.sum(), nu.sum())), True)
        return ProkhorovResult(_prokhorov_exact(mu[sa], nu[sb], d[np.ix_(sa, sb)]), True)
    return ProkhorovResult(prokhorov_coupling_bound(mu, nu, d), False)


# ------------------------------------------------------------------- Skorokhod

@dataclass(frozen=True)
class StepPath:
    """Right-continuous step function on [0, T]: ``values[k]`` on [times[k], times[k+1])."""

    times: np.ndarray
    values: np.ndarray
    T: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if len(t) == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0) or t[-1] > self.T:
            raise InvalidParameter("jump times must start at 0, increase strictly and stay below T")
        if len(self.values) != len(t):
            raise InvalidParameter("one value per segment is required")

    @classmethod
    def from_walk(cls, steps, time_scale, T):
        """Walk X_0, X_1, ... as the step function t -> X_{floor(t * time_scale)} on [0, T]."""
        steps = np.asarray(steps)
        k = min(len(steps), int(math.floor(T * time_scale)) + 1)
        s = steps[:k]
        change = np.concatenate([[True], s[1:] != s[:-1]])
        idx = np.flatnonzero(change)
        times = idx / time_scale
        keep = times < T
        return cls(times[keep], s[idx][keep], float(T))

    def at(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(k, 0, len(self.values) - 1)]

    @property
    def n_breakpoints(self):
        return len(self.times) - 1


@nb.njit(cache=True)
def _bottleneck_time(cost, allowed, a, b, T):
    """Least max time displacement over monotone lattice paths through allowed cells.

    Cell (i, j): x in segment i, y in segment j. A move i -> i+1 happens inside
    y's segment j (cost = distance from a[i+1] to [b_j, b_{j+1}]) or together
    with y's jump j+1 (cost |a[i+1] - b[j+1]|); a move j -> j+1 is free.
    """
    p = cost.shape[0] - 1
    q = cost.shape[1] - 1
    inf = np.inf
    best = np.full((p + 1, q + 1), inf)
    if not allowed[0, 0]:
        return inf
    best[0, 0] = 0.0
    for i in range(p + 1):
        for j in range(q + 1):
            if not allowed[i, j] or (i == 0 and j == 0):
                continue
            v = inf
            if j > 0 and best[i, j - 1] < v:
                v = best[i, j - 1]
            if i > 0:
                lo = 0.0 if j == 0 else b[j - 1]
                hi = T if j == q else b[j]
                ai = a[i - 1]
                c = lo - ai if ai < lo else (ai - hi if ai > hi else 0.0)
                w = max(best[i - 1, j], c)
                if w < v:
                    v = w
                if j > 0:
                    w = max(best[i - 1, j - 1], abs(ai - b[j - 1]))
                    if w < v:
                        v = w
            best[i, j] = v
    return best[p, q]


def skorokhod_j1(p1: StepPath, p2: StepPath, metric, combine: str = "sum") -> float:
    """J1 distance between step paths under monotone piecewise-linear time changes.

    ``combine='sum'`` adds the time and space displacements, ``'max'`` takes
    their maximum. Exact: the infimum is a minimum over lattice alignments and
    spatial thresholds.
    """
    if p1.T != p2.T:
        raise InvalidParameter("paths must share the horizon T")
    if p1.n_breakpoints > MAX_BREAKPOINTS or p2.n_breakpoints > MAX_BREAKPOINTS:
        raise TooManyBreakpoints("paths exceed 1000 breakpoints")
    d = np.asarray(getattr(metric, "values", metric), dtype=np.float64)
    cost = d[np.ix_(np.asarray(p1.values), np.asarray(p2.values))]
    a = np.asarray(p1.times[1:], dtype=np.float64)
    b = np.asarray(p2.times[1:], dtype=np.float64)
    levels = np.unique(cost)
    floor = max(cost[0, 0], cost[-1, -1])
    levels = levels[levels >= floor]
    best = np.inf
    for s in levels:
        if s >= best:
            break
        tc = _bottleneck_time(cost, cost <= s, a, b, float(p1.T))
        val = s + tc if combine == "sum" else max(s, tc)
        best = min(best, val)
    return float(best)


def uniform_distance(p1: StepPath, p2: StepPath, metric) -> float:
    d = np.asarray(getattr(metric, "values", metric), dtype=np.float64)
    t = np.union1d(p1.times, p2.times)
    return float(d[p1.at(t), p2.at(t)].max())


# --------------------------------------------------------------- correspondences

@dataclass(frozen=True)
class Correspondence:
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_pairs(cls, pairs):
        arr = np.asarray(sorted(set((int(x), int(y)) for x, y in pairs)), dtype=np.int64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    def transpose(self):
        return Correspondence(self.b, self.a)

    def check(self, na, nb_, roots=None):
        if len(np.unique(self.a)) != na or len(np.unique(self.b)) != nb_ or \
                self.a.min() < 0 or self.b.min() < 0 or self.a.max() >= na or self.b.max() >= nb_:
            raise InvalidCorrespondence("correspondence must cover both spaces")
        if roots is not None and not np.any((self.a == roots[0]) & (self.b == roots[1])):
            raise InvalidCorrespondence("pointed correspondence must pair the roots")


def identity_correspondence(n):
    return Correspondence(np.arange(n), np.arange(n))


@nb.njit(cache=True)
def _distortion(da, db, ia, ib):
    best = 0.0
    k = len(ia)
    for s in range(k):
        x = ia[s]
        y = ib[s]
        for t in range(s + 1, k):
            v = abs(da[x, ia[t]] - db[y, ib[t]])
            if v > best:
                best = v
    return best


def correspondence_distortion(c: Correspondence, dA, dB) -> float:
    da = np.asarray(getattr(dA, "values", dA), dtype=np.float64)
    db = np.asarray(getattr(dB, "values", dB), dtype=np.float64)
    return float(_distortion(da, db, c.a, c.b))


def _parameterization(obj):
    from .excursion_lab import DiscretizedContinuumTree
    from .tree_gen import PlaneTree, contour_process
    if isinstance(obj, PlaneTree):
        c = contour_process(obj)
        return np.linspace(0.0, 1.0, len(c.values)), c.vertices
    if isinstance(obj, DiscretizedContinuumTree):
        return obj.sample_index / obj.source.N, obj.rep_of_sample
    if isinstance(obj, tuple) and len(obj) == 2:
        return np.asarray(obj[0], dtype=np.float64), np.asarray(obj[1], dtype=np.int64)
    raise MissingParameterization(f"{type(obj).__name__} has no contour parameterization")


def _project(times, points, s):
    """Point at the nearest parameter time (ties go to the earlier one)."""
    k = np.searchsorted(times, s)
    k = np.clip(k, 1, len(times) - 1)
    left = times[k - 1]
    right = times[k]
    pick = np.where(s - left <= right - s, k - 1, k)
    return points[pick]


def _first_hits(times, points):
    _, first = np.unique(points, return_index=True)
    return times[first]


def contour_correspondence(small, large, grid=None) -> Correspondence:
    """Pair the points visited at equal normalized contour times.

    The time grid is ``grid`` (default: the union of both parameter grids)
    together with the first hitting time of every point on either side, so the
    result covers both spaces.
    """
    ta, pa = _parameterization(small)
    tb, pb = _parameterization(large)
    if grid is None:
        grid = np.union1d(ta, tb)
    grid = np.union1d(np.asarray(grid, dtype=np.float64),
                      np.concatenate([_first_hits(ta, pa), _first_hits(tb, pb)]))
    return Correspondence.from_pairs(zip(_project(ta, pa, grid), _project(tb, pb, grid)))


# ------------------------------------------------------------------ quadruples

@dataclass(frozen=True, eq=False)
class LocalTimes:
    """Piecewise-linear local times: ``values[x, k]`` at ``times[k]``."""

    times: np.ndarray
    values: np.ndarray

    def on_grid(self, grid):
        out = np.empty((self.values.shape[0], len(grid)))
        for x in range(self.values.shape[0]):
            out[x] = np.interp(grid, self.times, self.values[x])
        return out


@dataclass(frozen=True, eq=False)
class Quadruple:
    metric: np.ndarray
    measure: np.ndarray
    path: StepPath
    local_times: LocalTimes
    root: int = 0

    def __post_init__(self):
        n = self.metric.shape[0]
        if self.metric.shape != (n, n) or len(self.measure) != n or self.local_times.values.shape[0] != n:
            raise InvalidQuadruple("metric, measure and local times disagree in size")
        if np.any(self.measure < 0):
            raise InvalidQuadruple("measure must be nonnegative")
        if np.any(self.path.values < 0) or np.any(self.path.values >= n):
            raise InvalidQuadruple("path leaves the point set")
        if not 0 <= self.root < n:
            raise InvalidQuadruple("root outside the point set")

    @property
    def n_points(self):
        return self.metric.shape[0]

    @property
    def T(self):
        return self.path.T

    def to_json(self):
        return {"metric": self.metric.tolist(), "measure": self.measure.tolist(),
                "path": {"times": self.path.times.tolist(), "values": self.path.values.tolist(),
                         "T": self.path.T},
                "local_times": {"times": self.local_times.times.tolist(),
                                "values": self.local_times.values.tolist()},
                "root": int(self.root)}

    @classmethod
    def from_json(cls, obj):
        try:
            path = StepPath(np.asarray(obj["path"]["times"], dtype=np.float64),
                            np.asarray(obj["path"]["values"], dtype=np.int64), float(obj["path"]["T"]))
            lt = LocalTimes(np.asarray(obj["local_times"]["times"], dtype=np.float64),
                            np.asarray(obj["local_times"]["values"], dtype=np.float64))
            return cls(np.asarray(obj["metric"], dtype=np.float64),
                       np.asarray(obj["measure"], dtype=np.float64), path, lt, int(obj.get("root", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed quadruple: {exc}") from None


def read_quadruple(path) -> Quadruple:
    with open(path) as fh:
        return Quadruple.from_json(json.load(fh))


def write_quadruple(q: Quadruple, path):
    with open(path, "w") as fh:
        json.dump(q.to_json(), fh)


@nb.njit(cache=True)
def _min_plus(da, g):
    """out[a, b] = min_k da[a, k] + g[k, b]."""
    na, kk = da.shape
    nb_ = g.shape[1]
    out = np.full((na, nb_), np.inf)
    for a in range(na):
        row = out[a]
        for k in range(kk):
            dk = da[a, k]
            if not np.isfinite(dk):
                continue
            gk = g[k]
            for b in range(nb_):
                v = dk + gk[b]
                if v < row[b]:
                    row[b] = v
    return out


def sum_space_cross(dA, dB, c: Correspondence, distortion: float) -> np.ndarray:
    """Cross distances of the coupling metric on A ⊔ B:
    d(a, b) = inf over (a', b') in C of dA(a, a') + distortion/2 + dB(b', b)."""
    na, nb_ = dA.shape[0], dB.shape[0]
    g = np.full((na, nb_), np.inf)
    for a_, b_ in zip(c.a, c.b):
        np.minimum(g[a_], dB[b_], out=g[a_])
    return _min_plus(np.ascontiguousarray(dA), g) + distortion / 2.0


@dataclass(frozen=True)
class DKBound:
    prokhorov: float
    skorokhod: float
    displacement: float
    local_time: float
    distortion: float
    prokhorov_exact: bool
    skorokhod_exact: bool

    @property
    def total(self):
        return self.prokhorov + self.skorokhod + self.displacement + self.local_time

    def as_dict(self):
        return {"prokhorov": self.prokhorov, "skorokhod": self.skorokhod,
                "displacement": self.displacement, "local_time": self.local_time,
                "total": self.total, "distortion": self.distortion,
                "prokhorov_exact": self.prokhorov_exact, "skorokhod_exact": self.skorokhod_exact}


def _stacked(cross, dA, dB):
    na = dA.shape[0]
    z = np.empty((na + dB.shape[0],) * 2)
    z[:na, :na] = dA
    z[na:, na:] = dB
    z[:na, na:] = cross
    z[na:, :na] = cross.T
    return z


def dk_upper_bound(qA: Quadruple, qB: Quadruple, c: Correspondence, pointed: bool = True,
                   combine: str = "sum", grid_points: int = LOCAL_TIME_GRID) -> DKBound:
    """Four-term upper bound for a given correspondence.

    Both spaces are embedded in A ⊔ B with matched points at distance half the
    distortion. Terms: Prokhorov distance of the measures, J1 distance of the
    paths (uniform distance with the identity time change when the paths are
    too long for the exact alignment), the largest matched-pair distance, and
    the largest local-time gap over matched pairs on a shared time grid.
    """
    c.check(qA.n_points, qB.n_points, (qA.root, qB.root) if pointed else None)
    if qA.T != qB.T:
        raise InvalidParameter("quadruples must share the horizon T")
    dA, dB = qA.metric, qB.metric
    dis = correspondence_distortion(c, dA, dB)
    cross = sum_space_cross(dA, dB, c, dis)
    na, nb_ = qA.n_points, qB.n_points

    atoms = np.count_nonzero(qA.measure) + np.count_nonzero(qB.measure)
    if atoms <= EXACT_ATOMS:
        z = _stacked(cross, dA, dB)
        mu = np.concatenate([qA.measure, np.zeros(nb_)])
        nu = np.concatenate([np.zeros(na), qB.measure])
        pr = prokhorov_distance(mu, nu, z, mode="exact")
    else:
        pr = ProkhorovResult(prokhorov_coupling_bound(qA.measure, qB.measure, cross), False)

    pa = StepPath(qA.path.times, qA.path.values, qA.T)
    pb = StepPath(qB.path.times, qB.path.values + na, qB.T)
    if pa.n_breakpoints <= MAX_BREAKPOINTS and pb.n_breakpoints <= MAX_BREAKPOINTS:
        z = _stacked(cross, dA, dB)
        j1, j1_exact = skorokhod_j1(pa, pb, z, combine), True
    else:
        t = np.union1d(qA.path.times, qB.path.times)
        j1, j1_exact = float(cross[qA.path.at(t), qB.path.at(t)].max()), False

    disp = float(cross[c.a, c.b].max())
    grid = np.linspace(0.0, qA.T, grid_points)
    la = qA.local_times.on_grid(grid)
    lb = qB.local_times.on_grid(grid)
    lt = float(np.abs(la[c.a] - lb[c.b]).max())
    return DKBound(float(pr.value), j1, disp, lt, dis, pr.exact, j1_exact)
