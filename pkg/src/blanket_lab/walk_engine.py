"""Weighted random walks with exact local times, blanket and cover times."""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Optional

import numba as nb
import numpy as np

from .errors import BlanketLabError, InvalidParameter, WalkTimeout
from .graph_core import WeightedGraph, diameter
from .rng import derive_seed, make_state, next_u64

# ties m*L >= eps*t are accepted up to this relative slack
TIE_SLACK = 1.0 - 1e-12


class TooManyTimeouts(BlanketLabError):
    exit_code = 4


@nb.njit(cache=True)
def _build_alias(indptr, weights):
    prob = np.ones(len(weights))
    alias = np.zeros(len(weights), dtype=np.int64)
    n = len(indptr) - 1
    for x in range(n):
        lo = indptr[x]
        k = indptr[x + 1] - lo
        if k == 0:
            continue
        tot = 0.0
        for j in range(k):
            tot += weights[lo + j]
        scaled = np.empty(k)
        for j in range(k):
            scaled[j] = weights[lo + j] * k / tot
        small = np.empty(k, dtype=np.int64)
        large = np.empty(k, dtype=np.int64)
        ns = 0
        nl = 0
        for j in range(k):
            alias[lo + j] = j
            if scaled[j] < 1.0:
                small[ns] = j
                ns += 1
            else:
                large[nl] = j
                nl += 1
        while ns > 0 and nl > 0:
            ns -= 1
            s = small[ns]
            l = large[nl - 1]
            prob[lo + s] = scaled[s]
            alias[lo + s] = l
            scaled[l] = scaled[l] + scaled[s] - 1.0
            if scaled[l] < 1.0:
                nl -= 1
                small[ns] = l
                ns += 1
        for j in range(nl):
            prob[lo + large[j]] = 1.0
        for j in range(ns):
            prob[lo + small[j]] = 1.0
    return prob, alias


@nb.njit(inline="always")
def _step(pos, indptr, indices, prob, alias, state):
    lo = indptr[pos]
    deg = indptr[pos + 1] - lo
    r = next_u64(state)
    k = np.int64(((r >> np.uint64(32)) * np.uint64(deg)) >> np.uint64(32))
    u = np.float64(r & np.uint64(0xFFFFFFFF)) * (1.0 / 4294967296.0)
    if u >= prob[lo + k]:
        k = alias[lo + k]
    return indices[lo + k]


@nb.njit(cache=True)
def _walk_kernel(indptr, indices, prob, alias, start, horizon, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    path = np.empty(horizon + 1, dtype=np.int64)
    pos = start
    path[0] = pos
    for t in range(horizon):
        pos = _step(pos, indptr, indices, prob, alias, state)
        path[t + 1] = pos
    return path


@nb.njit(inline="always")
def _sift_down(heap, where, key, i, n):
    x = heap[i]
    kx = key[x]
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and key[heap[c + 1]] < key[heap[c]]:
            c += 1
        if key[heap[c]] >= kx:
            break
        heap[i] = heap[c]
        where[heap[i]] = i
        i = c
    heap[i] = x
    where[x] = i


@nb.njit(cache=True, nogil=True)
def _blanket_kernel(indptr, indices, prob, alias, mu, hold, kappa, start, t_max, seed, counts):
    """Single walk; returns (tau, cover, steps, clock_at_tau).

    The walk visits X_0, X_1, ...; after recording visit t-1 the local times
    are L_t. ``key[x] = count[x] / mu[x]`` only grows, so a min-heap keyed by
    it answers the all-vertices condition ``key >= kappa * clock`` in O(1).
    """
    n = len(indptr) - 1
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    heap = np.arange(n)
    where = np.arange(n)
    key = np.zeros(n)
    pos = start
    t = 0
    clock = 0.0
    visited = 0
    cover = -1
    tau = -1
    while t < t_max:
        c = counts[pos] + 1
        counts[pos] = c
        if c == 1:
            visited += 1
        key[pos] = c / mu[pos]
        _sift_down(heap, where, key, where[pos], n)
        t += 1
        clock += hold[pos]
        if visited == n:
            if cover < 0:
                cover = t
            if key[heap[0]] >= kappa * clock * TIE_SLACK:
                tau = t
                break
        pos = _step(pos, indptr, indices, prob, alias, state)
    return tau, cover, t, clock


@nb.njit(cache=True, nogil=True)
def _naive_blanket_kernel(indptr, indices, prob, alias, mu, hold, kappa, start, t_max, seed):
    n = len(indptr) - 1
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    counts = np.zeros(n, dtype=np.int64)
    pos = start
    clock = 0.0
    cover = -1
    for t in range(1, t_max + 1):
        counts[pos] += 1
        clock += hold[pos]
        ok = True
        allvis = True
        for x in range(n):
            if counts[x] == 0:
                allvis = False
            if not counts[x] / mu[x] >= kappa * clock * TIE_SLACK:
                ok = False
        if allvis and cover < 0:
            cover = t
        if ok:
            return t, cover
        pos = _step(pos, indptr, indices, prob, alias, state)
    return -1, cover


@nb.njit(cache=True, nogil=True)
def _blanket_batch(indptr, indices, prob, alias, mu, hold, kappa, start, t_max, seeds):
    n = len(indptr) - 1
    taus = np.empty(len(seeds), dtype=np.int64)
    covers = np.empty(len(seeds), dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for i in range(len(seeds)):
        counts[:] = 0
        tau, cov, _, _ = _blanket_kernel(indptr, indices, prob, alias, mu, hold, kappa,
                                         start, t_max, seeds[i], counts)
        taus[i] = tau
        covers[i] = cov
    return taus, covers


@nb.njit(cache=True, nogil=True)
def _cover_kernel(indptr, indices, prob, alias, start, t_max, seed):
    n = len(indptr) - 1
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    seen = np.zeros(n, dtype=np.bool_)
    pos = start
    visited = 0
    for t in range(1, t_max + 1):
        if not seen[pos]:
            seen[pos] = True
            visited += 1
            if visited == n:
                return t
        pos = _step(pos, indptr, indices, prob, alias, state)
    return -1


@nb.njit(cache=True, nogil=True)
def _checkpoint_kernel(indptr, indices, prob, alias, start, checkpoints, seed):
    """Visit counts ``#{s < t : X_s = x}`` at each checkpoint t (sorted)."""
    n = len(indptr) - 1
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    out = np.zeros((len(checkpoints), n), dtype=np.int32)
    counts = np.zeros(n, dtype=np.int32)
    pos = start
    t = 0
    for k in range(len(checkpoints)):
        target = checkpoints[k]
        while t < target:
            counts[pos] += 1
            t += 1
            pos = _step(pos, indptr, indices, prob, alias, state)
        out[k, :] = counts
    return out


@nb.njit(cache=True, nogil=True)
def _pair_sup_kernel(indptr, indices, prob, alias, start, steps, y, z, inv_mu_y, inv_mu_z, seed):
    """sup over t <= steps of |L_t(y) - L_t(z)| along one walk."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    cy = 0
    cz = 0
    best = 0.0
    pos = start
    for t in range(steps):
        if pos == y:
            cy += 1
            d = abs(cy * inv_mu_y - cz * inv_mu_z)
            if d > best:
                best = d
        elif pos == z:
            cz += 1
            d = abs(cy * inv_mu_y - cz * inv_mu_z)
            if d > best:
                best = d
        pos = _step(pos, indptr, indices, prob, alias, state)
    return best


_ALIAS_CACHE: "weakref.WeakKeyDictionary[WeightedGraph, tuple]" = weakref.WeakKeyDictionary()


def _tables(g: WeightedGraph):
    tab = _ALIAS_CACHE.get(g)
    if tab is None:
        prob, alias = _build_alias(g.indptr, g.weights)
        tab = (g.indptr, g.indices, prob, alias)
        _ALIAS_CACHE[g] = tab
    return tab


def _u64(seed):
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class WalkPath:
    start: int
    steps: np.ndarray
    seed: int

    def local_times(self, g: WeightedGraph, t: Optional[int] = None) -> "LocalTimeField":
        t = len(self.steps) - 1 if t is None else int(t)
        if not 0 <= t <= len(self.steps) - 1:
            raise InvalidParameter("t beyond the path length")
        counts = np.bincount(self.steps[:t], minlength=g.n_vertices)
        return LocalTimeField(counts, g.mu, t)


@dataclass(frozen=True)
class LocalTimeField:
    """Integer visit counts; ``values`` divides by the vertex weights on demand."""

    counts: np.ndarray
    mu: np.ndarray
    t: int

    @property
    def values(self):
        return self.counts / self.mu

    def occupation_total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class BlanketTimeResult:
    epsilon: float
    tau_blanket: Optional[int]
    cover_time: Optional[int]
    seed: int
    t_max: int

    @property
    def timed_out(self) -> bool:
        return self.tau_blanket is None


def _check_start(g, start):
    if not 0 <= int(start) < g.n_vertices:
        raise InvalidParameter(f"start vertex {start} out of range")


def default_t_max(g: WeightedGraph) -> int:
    n = g.n_vertices
    if g.is_tree():
        return int(64 * n ** 1.5)
    return int(64 * n * max(diameter(g), 1.0))


def run_walk(g: WeightedGraph, start: int, horizon: int, seed) -> WalkPath:
    _check_start(g, start)
    if horizon < 0:
        raise InvalidParameter("horizon must be nonnegative")
    indptr, indices, prob, alias = _tables(g)
    path = _walk_kernel(indptr, indices, prob, alias, int(start), int(horizon), _u64(seed))
    return WalkPath(int(start), path, int(seed))


def _check_eps(epsilon):
    if not 0.0 < epsilon < 1.0:
        raise InvalidParameter("epsilon must lie in (0, 1)")


def blanket_time_variable(g: WeightedGraph, start: int, epsilon: float, t_max: Optional[int] = None,
                          seed=0, hold=None, return_counts=False):
    """First integer t >= 1 with ``m * L_t(x) >= epsilon * t`` for every x.

    ``hold`` switches to the speed-measure variant used for discretized
    continuum trees: each visit to x advances the clock by ``hold[x]`` and the
    condition becomes ``L(x) >= epsilon * clock`` (no total-mass factor).
    The result's ``tau_blanket`` is ``None`` on timeout.
    """
    _check_start(g, start)
    _check_eps(epsilon)
    t_max = default_t_max(g) if t_max is None else int(t_max)
    if t_max < 1:
        raise InvalidParameter("t_max must be at least 1")
    indptr, indices, prob, alias = _tables(g)
    if hold is None:
        hold_arr = np.ones(g.n_vertices)
        kappa = epsilon / g.total_mass
    else:
        hold_arr = np.asarray(hold, dtype=np.float64)
        kappa = float(epsilon)
    counts = np.zeros(g.n_vertices, dtype=np.int64)
    if kappa * float(np.dot(g.mu, hold_arr)) > 1.0 + 1e-12:
        # the mu*hold-weighted mean of L equals clock / sum(mu*hold), so the
        # condition can never hold: report a timeout without walking
        res = BlanketTimeResult(float(epsilon), None, None, int(seed), t_max)
        return (res, LocalTimeField(counts, g.mu, 0), math.inf) if return_counts else res
    tau, cover, steps, clock = _blanket_kernel(indptr, indices, prob, alias, g.mu, hold_arr, kappa,
                                               int(start), t_max, _u64(seed), counts)
    res = BlanketTimeResult(float(epsilon), None if tau < 0 else int(tau),
                            None if cover < 0 else int(cover), int(seed), t_max)
    if return_counts:
        return res, LocalTimeField(counts, g.mu, int(steps)), clock
    return res


def continuum_blanket_time(g: WeightedGraph, start, epsilon, hold, t_max=None, seed=0):
    """Blanket time in continuum clock units, or ``inf`` on timeout."""
    res, _, clock = blanket_time_variable(g, start, epsilon, t_max, seed, hold=hold, return_counts=True)
    return math.inf if res.timed_out else float(clock)


def naive_blanket_time(g: WeightedGraph, start, epsilon, t_max, seed, hold=None):
    """O(n t) full-scan detector, kept as an independent cross-check."""
    indptr, indices, prob, alias = _tables(g)
    if hold is None:
        hold_arr, kappa = np.ones(g.n_vertices), epsilon / g.total_mass
    else:
        hold_arr, kappa = np.asarray(hold, dtype=np.float64), float(epsilon)
    tau, cover = _naive_blanket_kernel(indptr, indices, prob, alias, g.mu, hold_arr, kappa,
                                       int(start), int(t_max), _u64(seed))
    return (None if tau < 0 else int(tau)), (None if cover < 0 else int(cover))


def cover_time(g: WeightedGraph, start: int, t_max: Optional[int] = None, seed=0) -> int:
    """First t >= 1 such that every vertex appears among X_0..X_{t-1}."""
    _check_start(g, start)
    t_max = default_t_max(g) if t_max is None else int(t_max)
    indptr, indices, prob, alias = _tables(g)
    t = _cover_kernel(indptr, indices, prob, alias, int(start), t_max, _u64(seed))
    if t < 0:
        raise WalkTimeout(t_max)
    return int(t)


def blanket_times_batch(g: WeightedGraph, start, epsilon, seeds, t_max=None):
    """Blanket and cover times for many seeds; -1 marks a timeout."""
    _check_start(g, start)
    _check_eps(epsilon)
    t_max = default_t_max(g) if t_max is None else int(t_max)
    indptr, indices, prob, alias = _tables(g)
    seeds = np.array([int(s) & 0xFFFFFFFFFFFFFFFF for s in seeds], dtype=np.uint64)
    return _blanket_batch(indptr, indices, prob, alias, g.mu, np.ones(g.n_vertices),
                          epsilon / g.total_mass, int(start), t_max, seeds)


@dataclass(frozen=True)
class BlanketEstimate:
    starts: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    timeouts: np.ndarray
    t_bl: float
    argmax_start: int


def expected_blanket_time(g: WeightedGraph, epsilon: float, replicates: int, t_max=None,
                          master_seed=0, starts=None) -> BlanketEstimate:
    """Per-start mean blanket time and its maximum over starting vertices."""
    if replicates < 1:
        raise InvalidParameter("replicates must be positive")
    starts = np.arange(g.n_vertices) if starts is None else np.asarray(starts)
    means, errs, tos = [], [], []
    for x in starts:
        seeds = [derive_seed(master_seed, int(x), i) for i in range(replicates)]
        taus, _ = blanket_times_batch(g, int(x), epsilon, seeds, t_max)
        bad = int(np.sum(taus < 0))
        if bad > 0.01 * replicates:
            raise TooManyTimeouts(f"{bad} of {replicates} replicates timed out from start {x}")
        ok = taus[taus >= 0].astype(np.float64)
        means.append(ok.mean())
        errs.append(ok.std(ddof=1) / math.sqrt(len(ok)) if len(ok) > 1 else 0.0)
        tos.append(bad)
    means = np.array(means)
    k = int(np.argmax(means))
    return BlanketEstimate(starts, means, np.array(errs), np.array(tos), float(means[k]), int(starts[k]))


class EmptyKernel(InvalidParameter):
    pass


def smoothed_occupation(g: WeightedGraph, path: WalkPath, x: int, delta: float, t: int, metric) -> float:
    """Occupation of the tent kernel ``max(0, delta - d(x, .))`` over its mass."""
    if delta <= 0:
        raise InvalidParameter("delta must be positive")
    if not 0 <= t <= len(path.steps) - 1:
        raise InvalidParameter("t beyond the path length")
    row = np.array([metric(x, y) for y in range(g.n_vertices)]) if metric.values is None \
        else np.asarray(metric.values[x])
    f = np.maximum(0.0, delta - row)
    denom = float(np.dot(f, g.mu))
    if denom <= 0:
        raise EmptyKernel("no vertex within delta of x")
    return float(f[path.steps[:t]].sum() / denom)


def checkpoint_counts(g: WeightedGraph, start, checkpoints, seed):
    indptr, indices, prob, alias = _tables(g)
    cp = np.asarray(checkpoints, dtype=np.int64)
    if np.any(np.diff(cp) < 0) or (len(cp) and cp[0] < 0):
        raise InvalidParameter("checkpoints must be sorted and nonnegative")
    return _checkpoint_kernel(indptr, indices, prob, alias, int(start), cp, _u64(seed))


def pair_local_time_sup(g: WeightedGraph, start, steps, y, z, seed) -> float:
    indptr, indices, prob, alias = _tables(g)
    return float(_pair_sup_kernel(indptr, indices, prob, alias, int(start), int(steps), int(y), int(z),
                                  1.0 / g.mu[y], 1.0 / g.mu[z], _u64(seed)))
