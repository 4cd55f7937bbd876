"""Monte-Carlo experiment plans: blanket-time scaling fits, ECDF convergence
trends, local-time concentration, equicontinuity moduli and the excursion
scaling identity for blanket times."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numba as nb
import numpy as np
from scipy import stats

from .errors import DegenerateFit, InsufficientSamples, InvalidParameter, InvalidPlan
from .excursion_lab import excursion_to_tree, sample_excursion, theta_scale, Excursion
from .graph_core import graph_metric
from .graph_gen import (CRITICAL_LAW, components_with_surplus, largest_component,
                        sample_configuration_model, sample_degrees, sample_er_critical)
from .metric_compare import (LocalTimes, Quadruple, StepPath, contour_correspondence,
                             dk_upper_bound, _parameterization, _project)
from .rng import derive_seed, generator
from .tree_gen import sample_conditioned_gw, tree_distance_matrix, contour_process
from .walk_engine import (TooManyTimeouts, blanket_time_variable, checkpoint_counts,
                          pair_local_time_sup, run_walk)

MODELS = ("gw-tree", "er-component", "config-model", "excursion-tree")
KS_C95 = 1.3581  # asymptotic two-sample Kolmogorov quantile at 95%


def space_scale(model, n):
    """alpha(n): distances and local times are multiplied by this."""
    return n ** (-0.5) if model in ("gw-tree", "excursion-tree") else n ** (-1.0 / 3.0)


def time_scale(model, n):
    """beta(n): the walk runs beta(n) steps per unit of rescaled time."""
    if model == "gw-tree":
        return n ** 1.5
    if model == "excursion-tree":
        return 1.0
    return float(n)


# ---------------------------------------------------------------------- plans

@dataclass
class ExperimentPlan:
    model: str
    sizes: list
    epsilon: float = 0.3
    replicates: int = 100
    master_seed: int = 0
    t_max_factor: float = 400.0
    max_timeout_fraction: float = 0.05
    offspring: str = "poisson1"
    lam: float = 0.0
    degree_law: dict = field(default_factory=lambda: dict(CRITICAL_LAW))
    name: str = "experiment"

    def validate(self):
        if self.model not in MODELS:
            raise InvalidPlan(f"unknown model {self.model!r}; expected one of {MODELS}")
        sizes = list(self.sizes)
        if len(sizes) == 0 or any(int(s) != s or s < 2 for s in sizes):
            raise InvalidPlan("sizes must be integers >= 2")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise InvalidPlan("sizes must be strictly increasing")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidPlan("epsilon must lie in (0, 1)")
        if len(sizes) > 1 and self.replicates < 30:
            raise InvalidPlan("fitted quantities need at least 30 replicates per size")
        if self.replicates < 1 or self.t_max_factor <= 0:
            raise InvalidPlan("replicates and t_max_factor must be positive")
        return self

    def to_json(self):
        d = asdict(self)
        d["degree_law"] = {str(k): v for k, v in self.degree_law.items()}
        return d

    @classmethod
    def from_json(cls, obj):
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            from .config import unknown_key
            raise unknown_key(sorted(extra)[0], known)
        obj = dict(obj)
        if "degree_law" in obj:
            obj["degree_law"] = {int(k): float(v) for k, v in obj["degree_law"].items()}
        return cls(**obj).validate()


@dataclass
class ReplicateRecord:
    model: str
    size: int
    replicate: int
    seed: int
    start: int
    n_vertices: int
    n_edges: int
    epsilon: float
    tau_blanket: Optional[float]
    cover_time: Optional[int]
    timed_out: bool

    def to_json(self):
        return asdict(self)


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    stderr: float
    r_squared: float
    sizes: list
    medians: list
    iqrs: list
    timeouts: list


def replicate_seed(master, size, index):
    return derive_seed(master, int(size), int(index))


def _instance(plan: ExperimentPlan, size, seed):
    """(graph, start, hold, step budget) for one replicate."""
    gseed = derive_seed(seed, "graph")
    if plan.model == "gw-tree":
        t = sample_conditioned_gw(plan.offspring, size, gseed)
        return t.to_graph(), int(t.root), None, plan.t_max_factor * size ** 1.5
    if plan.model == "excursion-tree":
        dt = excursion_to_tree(sample_excursion(1.0, size, gseed))
        g, hold = dt.walk_data()
        return g, dt.root, hold, plan.t_max_factor * g.n_vertices ** 1.5
    if plan.model == "er-component":
        g = sample_er_critical(size, plan.lam, gseed)
    else:
        d = sample_degrees(plan.degree_law, size, gseed, lam=plan.lam, check=False)
        g = sample_configuration_model(d, derive_seed(gseed, "pairing"))
    sub, _ = largest_component(g)
    # ids are sorted, so vertex 0 is the lowest label of the component
    return sub, 0, None, plan.t_max_factor * size


def run_replicate(plan: ExperimentPlan, size, index) -> ReplicateRecord:
    seed = replicate_seed(plan.master_seed, size, index)
    g, start, hold, budget = _instance(plan, size, seed)
    wseed = derive_seed(seed, "walk")
    if g.n_vertices == 1:
        return ReplicateRecord(plan.model, size, index, seed, start, 1, 0, plan.epsilon, 0.0, 1, False)
    res, _, clock = blanket_time_variable(g, start, plan.epsilon, int(math.ceil(budget)), wseed,
                                          hold=hold, return_counts=True)
    if res.timed_out:
        tau = None
    else:
        tau = float(clock) if hold is not None else float(res.tau_blanket)
    return ReplicateRecord(plan.model, int(size), int(index), int(seed), int(start), g.n_vertices,
                           g.n_edges, plan.epsilon, tau, res.cover_time, res.timed_out)


def run_replicates(plan: ExperimentPlan, threads: int = 1, timings: Optional[list] = None):
    """All (size, replicate) records in canonical order, whatever the thread count."""
    plan.validate()
    jobs = [(s, i) for s in plan.sizes for i in range(plan.replicates)]

    def work(job):
        t0 = time.perf_counter()
        rec = run_replicate(plan, *job)
        return rec, time.perf_counter() - t0

    if threads <= 1:
        out = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(work, jobs))
    if timings is not None:
        timings.extend({"size": r.size, "replicate": r.replicate, "seconds": dt} for r, dt in out)
    return [r for r, _ in out]


def censored_values(records):
    return np.array([np.inf if r.tau_blanket is None else r.tau_blanket for r in records])


def fit_scaling(sizes, samples, statistic="median") -> ScalingFit:
    """Least squares of log(statistic) on log(size); timeouts count as +inf."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if len(np.unique(sizes)) < 2 or len(np.unique(sizes)) != len(sizes):
        raise DegenerateFit("need at least two distinct sizes")
    meds, iqrs, tos = [], [], []
    for x in samples:
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            if statistic == "median":
                q1, q2, q3 = np.percentile(x, [25, 50, 75])
            else:
                q2 = x.mean()
                q1, q3 = np.percentile(x, [25, 75])
        if not np.isfinite(q2) or q2 <= 0:
            raise DegenerateFit(f"{statistic} is not finite and positive")
        meds.append(float(q2))
        iqrs.append(float(q3 - q1))
        tos.append(int(np.sum(~np.isfinite(x))))
    fit = stats.linregress(np.log(sizes), np.log(meds))
    if not np.isfinite(fit.stderr):
        raise DegenerateFit("fit standard error is not finite")
    return ScalingFit(float(fit.slope), float(fit.intercept), float(fit.stderr), float(fit.rvalue ** 2),
                      [int(s) for s in sizes], meds, iqrs, tos)


def run_scaling_experiment(plan: ExperimentPlan, threads: int = 1, timings=None):
    """Blanket-time samples per size and the log-log fit of their medians."""
    records = run_replicates(plan, threads, timings)
    samples = []
    for s in plan.sizes:
        x = censored_values([r for r in records if r.size == s])
        bad = int(np.sum(~np.isfinite(x)))
        if bad > plan.max_timeout_fraction * len(x):
            raise TooManyTimeouts(f"{bad} of {len(x)} replicates timed out at size {s}")
        samples.append(x)
    if len(plan.sizes) < 2:
        return None, records
    return fit_scaling(plan.sizes, samples), records


def summary_rows(plan: ExperimentPlan, records):
    rows = []
    for s in plan.sizes:
        x = censored_values([r for r in records if r.size == s])
        with np.errstate(invalid="ignore"):
            q1, q2, q3 = np.percentile(x, [25, 50, 75]) if len(x) else (np.nan,) * 3
        beta = time_scale(plan.model, s)
        rows.append({"size": int(s), "replicates": len(x), "timeouts": int(np.sum(~np.isfinite(x))),
                     "median": float(q2), "q25": float(q1), "q75": float(q3),
                     "median_rescaled": float(q2 / beta)})
    return rows


# ------------------------------------------------------------------------- KS

def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic; +inf values are allowed."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise InsufficientSamples("empty sample")
    z = np.concatenate([a, b])
    z = z[np.isfinite(z)]
    if len(z) == 0:
        return 0.0
    fa = np.searchsorted(a, z, side="right") / len(a)
    fb = np.searchsorted(b, z, side="right") / len(b)
    return float(np.abs(fa - fb).max())


def ks_critical(n, m, level=0.95) -> float:
    c = stats.kstwobign.ppf(level)
    return float(c * math.sqrt((n + m) / (n * m)))


@dataclass
class KSTable:
    sizes: list
    ks: list
    decreasing: bool


def ks_convergence(samples_by_size: dict, beta=None, min_samples: int = 200) -> KSTable:
    """KS distance between rescaled ECDFs of consecutive sizes.

    ``beta`` maps a size to its time scale; rescaling by a positive constant
    per size matters only across sizes.
    """
    sizes = sorted(samples_by_size)
    if len(sizes) < 2:
        raise InsufficientSamples("need at least two sizes")
    for s in sizes:
        if len(samples_by_size[s]) < min_samples:
            raise InsufficientSamples(f"size {s} has fewer than {min_samples} samples")
    beta = beta or (lambda n: 1.0)
    resc = {s: np.asarray(samples_by_size[s], dtype=np.float64) / beta(s) for s in sizes}
    ks = [ks_statistic(resc[a], resc[b]) for a, b in zip(sizes, sizes[1:])]
    return KSTable(sizes, ks, bool(all(y <= x for x, y in zip(ks, ks[1:]))))


def ks_trend_vote(model, sizes, replicates, seeds, epsilon=0.3, threads=1, **plan_kw):
    """KS tables for several master seeds and the majority vote of their flags."""
    tables = []
    for ms in seeds:
        plan = ExperimentPlan(model, list(sizes), epsilon, replicates, ms, **plan_kw)
        recs = run_replicates(plan, threads)
        by = {s: censored_values([r for r in recs if r.size == s]) for s in sizes}
        tables.append(ks_convergence(by, lambda n: time_scale(model, n), min_samples=min(200, replicates)))
    votes = sum(t.decreasing for t in tables)
    return tables, votes * 2 > len(tables)


def ecdf_dominance(samples_low, samples_high) -> bool:
    """True when the ECDF of ``samples_low`` lies above that of ``samples_high``
    at every sample point (``samples_high`` stochastically larger)."""
    a = np.sort(np.asarray(samples_low, dtype=np.float64))
    b = np.sort(np.asarray(samples_high, dtype=np.float64))
    z = np.concatenate([a, b])
    z = z[np.isfinite(z)]
    fa = np.searchsorted(a, z, side="right") / len(a)
    fb = np.searchsorted(b, z, side="right") / len(b)
    return bool(np.all(fa >= fb))


# -------------------------------------------------------------- concentration

@dataclass
class TailTable:
    lambdas: np.ndarray
    tail: np.ndarray
    slope: float
    slope_stderr: float
    c1: float
    c2: float
    c1_fit: float
    violations_fit: int
    violations_envelope: int
    statistics: np.ndarray


def concentration_statistics(n, T, replicates, seed, offspring="poisson1"):
    """r^{-1} sup_{t <= T} |L_{rmt}(y) - L_{rmt}(z)| / sqrt(d(y, z)/r) on GW trees,
    for one uniform vertex pair per replicate; r = sqrt(n) is the distance scale
    and m the total mass."""
    out = np.empty(replicates)
    r = math.sqrt(n)
    for i in range(replicates):
        s = derive_seed(seed, "concentration", i)
        t = sample_conditioned_gw(offspring, n, derive_seed(s, "graph"))
        g = t.to_graph()
        rng = generator(derive_seed(s, "pair"))
        y, z = rng.choice(g.n_vertices, size=2, replace=False)
        d = float(t.depth[y] + t.depth[z] - 2 * t.depth[_lca(t, y, z)])
        steps = int(round(r * g.total_mass * T))
        sup = pair_local_time_sup(g, t.root, steps, y, z, derive_seed(s, "walk"))
        out[i] = sup / r / math.sqrt(d / r)
    return out


def _lca(t, a, b):
    depth, par = t.depth, t.parent
    while depth[a] > depth[b]:
        a = par[a]
    while depth[b] > depth[a]:
        b = par[b]
    while a != b:
        a, b = par[a], par[b]
    return a


def tail_fit(statistics, lambdas, min_events: int = 5) -> TailTable:
    """Empirical tail, least-squares fit of log tail on lambda, and the smallest
    c1 making c1 exp(-c2 lambda) dominate the tail on the grid."""
    lam = np.asarray(lambdas, dtype=np.float64)
    if np.any(lam < 0) or np.any(np.diff(lam) <= 0):
        raise InvalidParameter("lambda grid must be nonnegative and increasing")
    x = np.asarray(statistics, dtype=np.float64)
    tail = np.array([np.mean(x >= l) for l in lam])
    use = tail * len(x) >= min_events
    if use.sum() < 2:
        raise DegenerateFit("fewer than two grid points with enough tail events")
    fit = stats.linregress(lam[use], np.log(tail[use]))
    c2 = -float(fit.slope)
    c1_fit = float(math.exp(fit.intercept))
    c1 = float(np.max(tail * np.exp(c2 * lam)))
    viol_fit = int(np.sum(tail > c1_fit * np.exp(-c2 * lam) * (1 + 1e-12)))
    viol_env = int(np.sum(tail > c1 * np.exp(-c2 * lam) * (1 + 1e-12)))
    return TailTable(lam, tail, float(fit.slope), float(fit.stderr), c1, c2, c1_fit, viol_fit,
                     viol_env, x)


def concentration_check(n, lambda_grid, replicates, seed, T=2.0, offspring="poisson1") -> TailTable:
    return tail_fit(concentration_statistics(n, T, replicates, seed, offspring), lambda_grid)


# ------------------------------------------------------------ equicontinuity

@nb.njit(cache=True)
def _pair_modulus(counts, inv_mu, dist, thresholds, alpha):
    """For each threshold: max over pairs with alpha*d < threshold of
    alpha * max_k |L_k(y) - L_k(z)|."""
    K, n = counts.shape
    out = np.zeros(len(thresholds))
    top = thresholds[-1]
    for y in range(n):
        for z in range(y + 1, n):
            dd = alpha * dist[y, z]
            if dd >= top:
                continue
            best = 0.0
            for k in range(K):
                v = abs(counts[k, y] * inv_mu[y] - counts[k, z] * inv_mu[z])
                if v > best:
                    best = v
            best *= alpha
            for j in range(len(thresholds)):
                if dd < thresholds[j] and best > out[j]:
                    out[j] = best
    return out


@dataclass
class ModulusTable:
    deltas: np.ndarray
    probability: np.ndarray
    stderr: np.ndarray
    moduli: np.ndarray      # replicates x deltas


def equicontinuity_modulus(model, n, delta_grid, T, replicates, seed, epsilon=0.5,
                           checkpoints: int = 100, offspring="poisson1", lam=0.0) -> ModulusTable:
    """P(sup over alpha*d(y,z) < delta of sup_{t<=T} alpha |L(y) - L(z)| >= epsilon).

    Local times are read at ``checkpoints`` equally spaced times in [0, beta T].
    Trees use the graph distance; ER components the resistance metric.
    """
    deltas = np.asarray(delta_grid, dtype=np.float64)
    if np.any(deltas <= 0):
        raise InvalidParameter("delta grid must be positive")
    order = np.argsort(deltas)
    alpha, beta = space_scale(model, n), time_scale(model, n)
    steps = int(round(beta * T))
    cps = np.unique(np.linspace(0, steps, checkpoints + 1).round().astype(np.int64))
    mods = np.empty((replicates, len(deltas)))
    for i in range(replicates):
        s = derive_seed(seed, "modulus", i)
        gseed = derive_seed(s, "graph")
        if model == "gw-tree":
            t = sample_conditioned_gw(offspring, n, gseed)
            g, start, dist = t.to_graph(), t.root, tree_distance_matrix(t)
        elif model == "er-component":
            g, _ = largest_component(sample_er_critical(n, lam, gseed))
            start = 0
            dist = graph_metric(g, "resistance").values if g.n_vertices > 1 else np.zeros((1, 1))
        else:
            raise InvalidParameter(f"unsupported model {model!r}")
        counts = checkpoint_counts(g, start, cps, derive_seed(s, "walk")).astype(np.float64)
        m = _pair_modulus(counts, 1.0 / g.mu, np.ascontiguousarray(dist), deltas[order], alpha)
        mods[i, order] = m
    hit = mods >= epsilon
    p = hit.mean(axis=0)
    return ModulusTable(deltas, p, np.sqrt(p * (1 - p) / replicates), mods)


# -------------------------------------------------- excursion scaling identity

@dataclass
class IdentityCheck:
    ks: float
    critical: float
    base: np.ndarray
    scaled: np.ndarray


def blanket_scaling_identity_check(e: Excursion, a, epsilon, replicates, seed, N=None,
                                   adjust_epsilon=True, t_max_factor=400.0, base=None) -> IdentityCheck:
    """KS between a^{3/2} tau^e(eps) and tau^{Theta_a e}(eps/a) on the trees
    coded by ``e`` and Theta_a(e), with independent walk seeds.

    ``base`` reuses an already rescaled sample of a^{3/2} tau^e(eps), e.g. from
    a previous call with the same arguments, for a negative control.
    """
    if a < 1:
        raise InvalidParameter("a must be at least 1")
    eps2 = epsilon / a if adjust_epsilon else epsilon
    if not 0 < epsilon < 1 or not 0 < eps2 < 1:
        raise InvalidParameter("epsilon and epsilon/a must lie in (0, 1)")
    base_tree = excursion_to_tree(e, N)
    big_tree = excursion_to_tree(theta_scale(e, a), N)
    out = []
    for label, tree, eps, factor in (("base", base_tree, epsilon, a ** 1.5), ("scaled", big_tree, eps2, 1.0)):
        if label == "base" and base is not None:
            out.append(np.asarray(base, dtype=np.float64))
            continue
        g, hold = tree.walk_data()
        t_max = int(t_max_factor * g.n_vertices ** 1.5)
        x = np.empty(replicates)
        for i in range(replicates):
            res, _, clock = blanket_time_variable(g, tree.root, eps, t_max, derive_seed(seed, label, i),
                                                  hold=hold, return_counts=True)
            x[i] = np.inf if res.timed_out else clock * factor
        out.append(x)
    return IdentityCheck(ks_statistic(out[0], out[1]), ks_critical(len(out[0]), replicates), out[0], out[1])


# ------------------------------------------------------ component sizes

def component_size_samples(model, n, draws, seed, lam=0.0, degree_law=None):
    out = np.empty(draws)
    for i in range(draws):
        s = derive_seed(seed, model, n, i)
        if model == "er-component":
            g = sample_er_critical(n, lam, s)
        elif model == "config-model":
            d = sample_degrees(degree_law or CRITICAL_LAW, n, s, lam=lam, check=False)
            g = sample_configuration_model(d, derive_seed(s, "pairing"))
        else:
            raise InvalidParameter(f"unsupported model {model!r}")
        out[i] = components_with_surplus(g).sizes[0]
    return out


def component_size_exponent(model, sizes, draws, seed, **kw) -> ScalingFit:
    """Fit of log E[C_1] against log n."""
    samples = [component_size_samples(model, n, draws, seed, **kw) for n in sizes]
    return fit_scaling(sizes, samples, statistic="mean")


# --------------------------------------------------------------- d_K ladder

def _walk_local_times(steps, n_vertices, mu, cps):
    counts = np.zeros((len(cps), n_vertices))
    acc = np.zeros(n_vertices)
    prev = 0
    for k, c in enumerate(cps):
        acc += np.bincount(steps[prev:c], minlength=n_vertices)
        counts[k] = acc
        prev = c
    return counts / mu


def dk_ladder(sizes, master_size, seed, T=1.0, checkpoints=1000, offspring="poisson1"):
    """d_K upper bounds between successive resolutions of one GW tree and walk.

    A master tree with ``master_size`` edges carries a walk run for
    master_size^{3/2} T steps. The level-n object is the tree coded by the
    master contour sampled at 2n+1 times; its path is the projection of the
    master walk, and each point carries the master local times of the vertex
    visited at its first sampled contour time. Consecutive levels, the last one
    against the master itself, are compared through contour correspondences.
    """
    sizes = sorted(int(s) for s in sizes)
    if sizes[-1] >= master_size:
        raise InvalidParameter("ladder sizes must be below the master size")
    t = sample_conditioned_gw(offspring, master_size, derive_seed(seed, "graph"))
    g = t.to_graph()
    alpha, beta = space_scale("gw-tree", master_size), time_scale("gw-tree", master_size)
    n_steps = int(round(beta * T))
    walk = run_walk(g, t.root, n_steps, derive_seed(seed, "walk")).steps
    cps = np.unique(np.linspace(0, n_steps, checkpoints + 1).round().astype(np.int64))
    lt_master = _walk_local_times(walk, g.n_vertices, g.mu, cps)
    knots = cps / beta
    contour = contour_process(t)
    tm, pm = _parameterization(t)
    first_time = np.empty(g.n_vertices)
    _, fi = np.unique(pm, return_index=True)
    first_time[pm[fi]] = tm[fi]

    def quadruple_of(points_of_master, anchor, mass, metric):
        # anchor[r]: master vertex whose local times represent point r
        lt = alpha * lt_master[:, anchor].T
        p = StepPath.from_walk(points_of_master[walk], beta, T)
        return Quadruple(metric, mass / mass.sum(), p, LocalTimes(knots, lt),
                         int(points_of_master[t.root]))

    levels = []
    e = Excursion.from_contour(contour.values, 1.0)
    for n in sizes:
        dt = excursion_to_tree(e, 2 * n)
        times, pts = _parameterization(dt)
        proj = _project(times, pts, first_time)
        anchor = contour.vertices[dt.sample_index[dt.first_sample]]
        levels.append((dt, quadruple_of(proj, anchor, dt.mass, alpha * dt.metric())))
    ident = np.arange(g.n_vertices)
    levels.append((t, quadruple_of(ident, ident, g.mu, alpha * tree_distance_matrix(t))))
    bounds = []
    for (oa, qa), (ob, qb) in zip(levels, levels[1:]):
        c = contour_correspondence(oa, ob)
        bounds.append(dk_upper_bound(qa, qb, c))
    return bounds
